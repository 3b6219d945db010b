"""Private simultaneous messages (PSM) protocols and their use as SDHT schemes.

Two perfectly private constructions are provided:

* ``FknProtocol``: two clients and a one-time table. The key is a permutation of the
  second client's inputs plus a pad.
* ``KilianProtocol``: any number of clients. A permutation branching program (compiled
  from a boolean formula, or a cyclic counter) is randomized by fresh group elements
  between consecutive instructions.

``psm_verify`` checks correctness and privacy either exhaustively or by sampling.
``psm_to_sdht`` turns a verified protocol for a symmetric detector into an SDHT scheme
whose privacy loss is bounded by its correctness error.
"""
import itertools
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2_contingency

from config import Config
from prob_core import DimensionError, EnumerationBudgetError, FiniteDistribution
from rng import counter_rng
from sdht_engine import AuditFailure, EvaluationReport

logger = logging.getLogger(__name__)


class UnsupportedPredicateError(ValueError):
    """Raised when a predicate cannot be expressed by the requested program family."""


class ProtocolError(ValueError):
    """Raised when a program or protocol breaks its own invariant."""


class UnverifiedProtocolError(ValueError):
    """Raised when a protocol is used before passing verification."""


# ---------------------------------------------------------------------------
# Groups

class FiniteGroup:
    """Finite group given by its multiplication table over element indices 0..order-1.

    mul(a, b) means "apply a, then b"; for permutations (a*b)[i] = b[a[i]].
    """

    def __init__(self, elements: Sequence[Any], table, descriptor: dict):
        self.elements = tuple(elements)
        self._index = {e: i for i, e in enumerate(self.elements)}
        table = np.asarray(table, dtype=np.int64)
        table.flags.writeable = False
        self.table = table
        self.descriptor = dict(descriptor)
        order = len(self.elements)
        everything = np.arange(order)
        self.identity = next(i for i in range(order) if np.array_equal(table[i], everything))
        inverse = np.array([int(np.flatnonzero(table[i] == self.identity)[0]) for i in range(order)])
        inverse.flags.writeable = False
        self.inverse = inverse

    @property
    def order(self) -> int:
        return len(self.elements)

    def index(self, element) -> int:
        key = tuple(element) if isinstance(element, list) else element
        if key not in self._index:
            raise ValueError(f"{element!r} is not an element of {self.descriptor}")
        return self._index[key]

    def element(self, i: int):
        return self.elements[i]

    def mul(self, a: int, b: int) -> int:
        return int(self.table[a, b])

    def inv(self, a: int) -> int:
        return int(self.inverse[a])

    def product(self, seq: Sequence[int]) -> int:
        return reduce(self.mul, seq, self.identity)

    def conjugate(self, x: int, theta: int) -> int:
        """theta^-1 * x * theta."""
        return self.mul(self.mul(self.inv(theta), x), theta)

    def element_to_json(self, i: int):
        e = self.elements[i]
        return list(e) if isinstance(e, tuple) else e

    def to_json(self) -> dict:
        return dict(self.descriptor)

    def __repr__(self):
        return f"FiniteGroup({self.descriptor})"


@lru_cache(maxsize=None)
def symmetric_group(degree: int = 5) -> FiniteGroup:
    if degree < 1:
        raise ValueError(f"Degree must be >= 1, got {degree}")
    elements = list(itertools.permutations(range(degree)))
    index = {e: i for i, e in enumerate(elements)}
    table = [[index[tuple(b[a[k]] for k in range(degree))] for b in elements] for a in elements]
    return FiniteGroup(elements, table, {'kind': 'symmetric', 'degree': degree})


@lru_cache(maxsize=None)
def cyclic_group(order: int) -> FiniteGroup:
    if order < 1:
        raise ValueError(f"Order must be >= 1, got {order}")
    residues = np.arange(order)
    table = (residues[:, None] + residues[None, :]) % order
    return FiniteGroup(list(range(order)), table, {'kind': 'cyclic', 'order': order})


def group_from_json(descriptor: dict) -> FiniteGroup:
    kind = descriptor.get('kind')
    if kind == 'symmetric':
        return symmetric_group(int(descriptor['degree']))
    if kind == 'cyclic':
        return cyclic_group(int(descriptor['order']))
    raise ValueError(f"Unknown group kind '{kind}'")


# ---------------------------------------------------------------------------
# Boolean formulas over bit-encoded client samples

@dataclass(frozen=True)
class Leaf:
    """Bit `bit` of client `client`'s encoded sample."""
    client: int
    bit: int

    def __post_init__(self):
        if self.client < 0 or self.bit < 0:
            raise ValueError(f"Leaf indices must be non-negative, got ({self.client}, {self.bit})")

    def evaluate(self, inputs: Sequence[int]) -> int:
        return (int(inputs[self.client]) >> self.bit) & 1

    def depth(self) -> int:
        return 0

    def leaves(self):
        return {self}

    def to_json(self):
        return {'op': 'leaf', 'client': self.client, 'bit': self.bit}


@dataclass(frozen=True)
class Not:
    child: Any

    def evaluate(self, inputs):
        return 1 - self.child.evaluate(inputs)

    def depth(self):
        return self.child.depth()

    def leaves(self):
        return self.child.leaves()

    def to_json(self):
        return {'op': 'not', 'child': self.child.to_json()}


@dataclass(frozen=True)
class And:
    left: Any
    right: Any

    def evaluate(self, inputs):
        return self.left.evaluate(inputs) & self.right.evaluate(inputs)

    def depth(self):
        return 1 + max(self.left.depth(), self.right.depth())

    def leaves(self):
        return self.left.leaves() | self.right.leaves()

    def to_json(self):
        return {'op': 'and', 'left': self.left.to_json(), 'right': self.right.to_json()}


@dataclass(frozen=True)
class Or:
    left: Any
    right: Any

    def evaluate(self, inputs):
        return self.left.evaluate(inputs) | self.right.evaluate(inputs)

    def depth(self):
        return 1 + max(self.left.depth(), self.right.depth())

    def leaves(self):
        return self.left.leaves() | self.right.leaves()

    def to_json(self):
        return {'op': 'or', 'left': self.left.to_json(), 'right': self.right.to_json()}


def formula_from_json(data: dict):
    op = data.get('op')
    if op == 'leaf':
        return Leaf(int(data['client']), int(data['bit']))
    if op == 'not':
        return Not(formula_from_json(data['child']))
    if op in ('and', 'or'):
        node = And if op == 'and' else Or
        return node(formula_from_json(data['left']), formula_from_json(data['right']))
    raise ValueError(f"Unknown formula node '{op}'")


def _balanced(nodes: List[Any], node_type) -> Any:
    if len(nodes) == 1:
        return nodes[0]
    mid = len(nodes) // 2
    return node_type(_balanced(nodes[:mid], node_type), _balanced(nodes[mid:], node_type))


def bits_per_client(size: int) -> int:
    return max(0, (int(size) - 1).bit_length())


def formula_from_truth_table(table, input_sizes: Sequence[int]):
    """Balanced DNF of a truth table over clients with the given alphabet sizes.

    Each client's sample is encoded in ceil(log2 size) bits. Codes at or above the
    alphabet size never occur as inputs, so the formula is only specified on valid codes.
    """
    table = np.asarray(table, dtype=np.int64)
    input_sizes = tuple(int(s) for s in input_sizes)
    if table.shape != input_sizes:
        raise DimensionError(f"Truth table has shape {table.shape}, expected {input_sizes}")
    widths = [bits_per_client(s) for s in input_sizes]

    terms = []
    for x in itertools.product(*(range(s) for s in input_sizes)):
        if not table[x]:
            continue
        literals = []
        for client, (value, width) in enumerate(zip(x, widths)):
            for bit in range(width):
                leaf = Leaf(client, bit)
                literals.append(leaf if (value >> bit) & 1 else Not(leaf))
        terms.append(_balanced(literals, And) if literals else None)

    anchor = Leaf(0, 0)
    if not terms:
        return And(anchor, Not(anchor))
    if any(t is None for t in terms):
        return Or(anchor, Not(anchor))
    return _balanced(terms, Or)


def majority_formula():
    """Majority of three single-bit clients: (x0 & x1) | (x0 & x2) | (x1 & x2)."""
    x0, x1, x2 = Leaf(0, 0), Leaf(1, 0), Leaf(2, 0)
    return _balanced([And(x0, x1), And(x0, x2), And(x1, x2)], Or)


def truth_table(func: Callable[..., int], input_sizes: Sequence[int]) -> np.ndarray:
    """Tabulate func(x_1, ..., x_n) over the product of alphabets."""
    input_sizes = tuple(int(s) for s in input_sizes)
    table = np.zeros(input_sizes, dtype=np.int64)
    for x in itertools.product(*(range(s) for s in input_sizes)):
        table[x] = 1 if func(*x) else 0
    return table


def named_truth_table(name: str, n: int, alphabet_size: int = 2) -> np.ndarray:
    """Symmetric detectors by name: majority, parity, and, or, constant0, constant1."""
    rules = {
        'majority': lambda *x: 2 * sum(x) > n,
        'parity': lambda *x: sum(x) % 2,
        'and': lambda *x: all(x),
        'or': lambda *x: any(x),
        'constant0': lambda *x: 0,
        'constant1': lambda *x: 1,
    }
    if name not in rules:
        raise ValueError(f"Unknown detector table '{name}'. Known: {sorted(rules)}")
    return truth_table(rules[name], (alphabet_size,) * n)


def is_symmetric_table(table) -> bool:
    table = np.asarray(table)
    # adjacent transpositions generate all permutations of the clients
    return all(np.array_equal(table, np.swapaxes(table, i, i + 1)) for i in range(table.ndim - 1))


# ---------------------------------------------------------------------------
# Permutation branching programs

@dataclass(frozen=True)
class Instruction:
    leaf: Leaf
    if_zero: int
    if_one: int


@dataclass(frozen=True)
class PermBranchingProgram:
    group: FiniteGroup
    instructions: Tuple[Instruction, ...]
    accept: int

    def __post_init__(self):
        object.__setattr__(self, 'instructions', tuple(self.instructions))
        if not self.instructions:
            raise ValueError("A program needs at least one instruction")
        if self.accept == self.group.identity:
            raise ValueError("The accept element must differ from the identity")

    def __len__(self):
        return len(self.instructions)

    @property
    def client_count(self) -> int:
        return 1 + max(ins.leaf.client for ins in self.instructions)

    def implied_input_sizes(self) -> Tuple[int, ...]:
        widths = [0] * self.client_count
        for ins in self.instructions:
            widths[ins.leaf.client] = max(widths[ins.leaf.client], ins.leaf.bit + 1)
        return tuple(2 ** w for w in widths)

    def selected(self, inputs: Sequence[int]) -> List[int]:
        return [ins.if_one if ins.leaf.evaluate(inputs) else ins.if_zero for ins in self.instructions]

    def product(self, inputs: Sequence[int]) -> int:
        return self.group.product(self.selected(inputs))

    def output(self, inputs: Sequence[int]) -> int:
        result = self.product(inputs)
        if result == self.group.identity:
            return 0
        if result == self.accept:
            return 1
        raise ProtocolError(f"Program product on input {tuple(inputs)} is neither identity nor accept")

    def to_json(self) -> dict:
        g = self.group
        return {
            'group': g.to_json(),
            'accept': g.element_to_json(self.accept),
            'instructions': [
                {'client': ins.leaf.client, 'bit': ins.leaf.bit,
                 'if_zero': g.element_to_json(ins.if_zero), 'if_one': g.element_to_json(ins.if_one)}
                for ins in self.instructions
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> 'PermBranchingProgram':
        g = group_from_json(data['group'])
        instructions = tuple(
            Instruction(Leaf(int(i['client']), int(i['bit'])), g.index(i['if_zero']), g.index(i['if_one']))
            for i in data['instructions']
        )
        return cls(g, instructions, g.index(data['accept']))


def _inputs_of(input_sizes: Sequence[int]) -> List[Tuple[int, ...]]:
    return list(itertools.product(*(range(s) for s in input_sizes)))


def validate_program(program: PermBranchingProgram, input_sizes: Sequence[int] = None):
    """Check exhaustively that every input's product is the identity or the accept element."""
    input_sizes = tuple(input_sizes or program.implied_input_sizes())
    if math.prod(input_sizes) > Config.ENUMERATION_BUDGET:
        raise EnumerationBudgetError(f"{math.prod(input_sizes):,} inputs exceed the enumeration budget")
    for x in _inputs_of(input_sizes):
        program.output(x)
    return True


# The accept element is the 5-cycle 1 -> 2 -> 3 -> 4 -> 5 -> 1, written 0-indexed
ACCEPT_CYCLE = (1, 2, 3, 4, 0)


def _is_five_cycle(perm: Tuple[int, ...]) -> bool:
    point, steps = perm[0], 1
    while point != 0:
        point, steps = perm[point], steps + 1
    return steps == 5 and len(perm) == 5


@lru_cache(maxsize=None)
def _conjugator(target: int) -> int:
    """First element theta (in lexicographic order) with theta^-1 * C * theta = target."""
    g = symmetric_group(5)
    accept = g.index(ACCEPT_CYCLE)
    for theta in range(g.order):
        if g.conjugate(accept, theta) == target:
            return theta
    raise ProtocolError(f"{g.element(target)} is not conjugate to the accept cycle")


@lru_cache(maxsize=None)
def _commutator_pair() -> Tuple[int, int]:
    """Fixed 5-cycles (alpha, beta) whose commutator alpha beta alpha^-1 beta^-1 is the accept cycle."""
    g = symmetric_group(5)
    alpha = g.index(ACCEPT_CYCLE)
    for beta in range(g.order):
        if not _is_five_cycle(g.element(beta)):
            continue
        gamma = g.product([alpha, beta, g.inv(alpha), g.inv(beta)])
        if _is_five_cycle(g.element(gamma)):
            # move gamma onto the accept cycle, carrying alpha and beta along
            theta = _conjugator(gamma)
            theta_inv = g.inv(theta)
            return g.conjugate(alpha, theta_inv), g.conjugate(beta, theta_inv)
    raise ProtocolError("No commutator pair found")


def _prepend(layers: List[Instruction], element: int, g: FiniteGroup) -> List[Instruction]:
    first = layers[0]
    return [Instruction(first.leaf, g.mul(element, first.if_zero), g.mul(element, first.if_one))] + layers[1:]


def _append(layers: List[Instruction], element: int, g: FiniteGroup) -> List[Instruction]:
    last = layers[-1]
    return layers[:-1] + [Instruction(last.leaf, g.mul(last.if_zero, element), g.mul(last.if_one, element))]


def _conjugate_layers(layers: List[Instruction], target: int, g: FiniteGroup) -> List[Instruction]:
    """Turn a program computing the accept cycle into one computing `target`."""
    theta = _conjugator(target)
    return _append(_prepend(layers, g.inv(theta), g), theta, g)


def _compile(node, g: FiniteGroup, accept: int) -> List[Instruction]:
    if isinstance(node, Leaf):
        return [Instruction(node, g.identity, accept)]
    if isinstance(node, Not):
        # P * C^-1 yields e on true and C^-1 on false; conjugating C^-1 to C finishes
        layers = _append(_compile(node.child, g, accept), g.inv(accept), g)
        return _relabel(layers, g.inv(accept), accept, g)
    if isinstance(node, And):
        alpha, beta = _commutator_pair()
        left = _compile(node.left, g, accept)
        right = _compile(node.right, g, accept)
        return (_conjugate_layers(left, alpha, g) + _conjugate_layers(right, beta, g)
                + _conjugate_layers(left, g.inv(alpha), g) + _conjugate_layers(right, g.inv(beta), g))
    if isinstance(node, Or):
        return _compile(Not(And(Not(node.left), Not(node.right))), g, accept)
    raise ValueError(f"Unknown formula node {node!r}")


def _relabel(layers: List[Instruction], current: int, wanted: int, g: FiniteGroup) -> List[Instruction]:
    """Conjugate a program with outputs {e, current} into one with outputs {e, wanted}."""
    theta = g.mul(g.inv(_conjugator(current)), _conjugator(wanted))
    return _append(_prepend(layers, g.inv(theta), g), theta, g)


def barrington_compile(formula) -> PermBranchingProgram:
    """Width-5 permutation branching program over S5 with accept element (1 2 3 4 5).

    Length is at most 4**formula.depth().
    """
    g = symmetric_group(5)
    accept = g.index(ACCEPT_CYCLE)
    layers = _compile(formula, g, accept)
    logger.debug("compiled formula of depth %d into %d instructions", formula.depth(), len(layers))
    return PermBranchingProgram(g, tuple(layers), accept)


def counter_program(n: int, modulus: int, residues) -> PermBranchingProgram:
    """Cyclic-group program for 1{x_1 + ... + x_n mod m in S} over bits x_j.

    The sums reachable from n bits must land in exactly two residues {0, r}, with 0 outside
    S and r inside S, so that the product is the identity or the accept element r.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if modulus < 2:
        raise ValueError(f"Modulus must be >= 2, got {modulus}")
    residues = {int(s) for s in residues}
    if any(not 0 <= s < modulus for s in residues):
        raise ValueError(f"Residues must lie in [0, {modulus})")
    reachable = sorted({k % modulus for k in range(n + 1)})
    if len(reachable) != 2:
        raise UnsupportedPredicateError(
            f"Sums of {n} bits reach {len(reachable)} residues mod {modulus}; a counter program needs exactly 2"
        )
    other = reachable[1]
    if 0 in residues or other not in residues:
        raise UnsupportedPredicateError(
            f"Residue set {sorted(residues)} must exclude 0 and contain {other} to map onto identity/accept"
        )
    g = cyclic_group(modulus)
    instructions = tuple(Instruction(Leaf(j, 0), g.identity, g.index(1)) for j in range(n))
    return PermBranchingProgram(g, instructions, g.index(other))


# ---------------------------------------------------------------------------
# Protocols

def _bits_for(size: int) -> int:
    return (int(size) - 1).bit_length()


# Transcript entries stay far below this, so v0 * base + v1 is injective
_JOINT_BASE = 2 ** 20


class PsmProtocol:
    """One-shot protocol: client i sends encode(i, x_i, key); the referee decodes all messages."""

    name = 'psm'

    def __init__(self, input_sizes: Sequence[int]):
        self.input_sizes = tuple(int(s) for s in input_sizes)
        if not self.input_sizes or any(s < 1 for s in self.input_sizes):
            raise ValueError(f"Invalid input sizes {self.input_sizes}")

    @property
    def client_count(self) -> int:
        return len(self.input_sizes)

    @property
    def key_count(self) -> int:
        raise NotImplementedError

    @property
    def key_bits(self) -> int:
        return _bits_for(self.key_count)

    @property
    def message_alphabets(self) -> Tuple[int, ...]:
        raise NotImplementedError

    @property
    def comm_bits(self) -> int:
        return sum(_bits_for(size) for size in self.message_alphabets)

    def iter_keys(self) -> Iterator[Any]:
        raise NotImplementedError

    def sample_keys(self, rng: np.random.Generator, size: int) -> List[Any]:
        raise NotImplementedError

    def encode(self, client: int, x: int, key) -> Tuple[int, ...]:
        raise NotImplementedError

    def decode(self, messages: Sequence[Tuple[int, ...]]) -> int:
        raise NotImplementedError

    @property
    def encoders(self) -> Tuple[Callable[[int, Any], Tuple[int, ...]], ...]:
        return tuple((lambda x, key, i=i: self.encode(i, x, key)) for i in range(self.client_count))

    @property
    def decoder(self) -> Callable[[Sequence[Tuple[int, ...]]], int]:
        return self.decode

    def transcript(self, inputs: Sequence[int], key) -> Tuple[Tuple[int, ...], ...]:
        return tuple(self.encode(i, x, key) for i, x in enumerate(inputs))

    def transcript_matrix(self, inputs: Sequence[int], keys: Sequence[Any]) -> np.ndarray:
        """Flattened transcripts, one row per key."""
        rows = [sum(self.transcript(inputs, key), ()) for key in keys]
        return np.array(rows, dtype=np.int64)

    def decode_matrix(self, matrix: np.ndarray) -> np.ndarray:
        """Decoded outputs per flattened transcript row; -1 where decoding fails."""
        sizes = [len(m) for m in self.transcript(tuple(0 for _ in self.input_sizes), next(self.iter_keys()))]
        bounds = np.cumsum([0] + sizes)
        out = np.empty(matrix.shape[0], dtype=np.int64)
        for r, row in enumerate(matrix.tolist()):
            messages = tuple(tuple(row[bounds[i]:bounds[i + 1]]) for i in range(len(sizes)))
            try:
                out[r] = self.decode(messages)
            except ProtocolError:
                out[r] = -1
        return out

    def product_statistic(self, matrix: np.ndarray) -> np.ndarray:
        """Joint statistic of the first and last transcript positions."""
        if matrix.shape[1] < 2:
            return matrix[:, 0]
        return matrix[:, 0] * _JOINT_BASE + matrix[:, -1]

    def to_json(self) -> dict:
        raise NotImplementedError


class FknProtocol(PsmProtocol):
    """Two-party one-time-table PSM for f: X1 x X2 -> {0, 1}.

    Key (pi, r): a permutation of X2 and a pad in {0,1}^|X2|. Client 1 sends
    M[j] = f(x1, pi^-1(j)) xor r[j]; client 2 sends (pi(x2), r[pi(x2)]).

    Defects (for mutation testing): "drop_pad" sends the table row unpadded;
    "biased_permutation" only draws permutations fixing symbol 0.
    """

    name = 'fkn'
    DEFECTS = (None, 'drop_pad', 'biased_permutation')

    def __init__(self, table, defect: Optional[str] = None):
        table = np.asarray(table, dtype=np.int64)
        if table.ndim != 2 or table.size == 0:
            raise ValueError(f"FKN needs a non-empty two-dimensional truth table, got shape {table.shape}")
        if not np.isin(table, (0, 1)).all():
            raise ValueError("Truth table entries must be 0 or 1")
        if defect not in self.DEFECTS:
            raise ValueError(f"Unknown defect '{defect}'. Known: {self.DEFECTS[1:]}")
        super().__init__(table.shape)
        table.flags.writeable = False
        self.table = table
        self.defect = defect

    @property
    def _width(self) -> int:
        return self.input_sizes[1]

    def _permutations(self) -> Iterator[Tuple[int, ...]]:
        if self.defect == 'biased_permutation':
            return ((0,) + p for p in itertools.permutations(range(1, self._width)))
        return itertools.permutations(range(self._width))

    @property
    def key_count(self) -> int:
        s = self._width
        perms = math.factorial(s - 1) if self.defect == 'biased_permutation' else math.factorial(s)
        return perms * 2 ** s

    @property
    def message_alphabets(self) -> Tuple[int, ...]:
        return (2 ** self._width, 2 * self._width)

    def iter_keys(self):
        pads = list(itertools.product((0, 1), repeat=self._width))
        for perm in self._permutations():
            for pad in pads:
                yield perm, pad

    def sample_keys(self, rng, size):
        s = self._width
        if self.defect == 'biased_permutation':
            tail = rng.permuted(np.tile(np.arange(1, s), (size, 1)), axis=1)
            perms = np.hstack([np.zeros((size, 1), dtype=np.int64), tail])
        else:
            perms = rng.permuted(np.tile(np.arange(s), (size, 1)), axis=1)
        pads = rng.integers(2, size=(size, s))
        return [(tuple(p), tuple(r)) for p, r in zip(perms.tolist(), pads.tolist())]

    def encode(self, client, x, key):
        perm, pad = key
        if not 0 <= x < self.input_sizes[client]:
            raise ValueError(f"Input {x} outside client {client}'s alphabet")
        if client == 0:
            inverse = [0] * self._width
            for value, position in enumerate(perm):
                inverse[position] = value
            row = self.table[x]
            if self.defect == 'drop_pad':
                return tuple(int(row[inverse[j]]) for j in range(self._width))
            return tuple(int(row[inverse[j]]) ^ pad[j] for j in range(self._width))
        if client == 1:
            j = perm[x]
            return j, (0 if self.defect == 'drop_pad' else pad[j])
        raise ValueError(f"FKN has two clients, got client {client}")

    def decode(self, messages):
        masked_row, (j, pad_bit) = messages
        return int(masked_row[j]) ^ int(pad_bit)

    def to_json(self):
        return {'protocol': self.name, 'truth_table': self.table.tolist(), 'key_bits': self.key_bits,
                'defect': self.defect}


def fkn_two_party(truth_table, defect: Optional[str] = None) -> FknProtocol:
    """FKN protocol for a two-party truth table; refuses tables too large to verify exhaustively."""
    protocol = FknProtocol(truth_table, defect=defect)
    work = protocol.key_count * math.prod(protocol.input_sizes)
    if work > Config.ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"{work:,} (input, key) pairs exceed the enumeration budget of {Config.ENUMERATION_BUDGET:,}"
        )
    return protocol


class KilianProtocol(PsmProtocol):
    """Group-program PSM. Key g_1..g_{L-1} (g_0 = g_L = e); instruction j's owner sends
    h_j = g_{j-1}^-1 sigma_j g_j. The ordered product of all h_j is the program's product.

    Defect "reuse_key" uses one group element for every g_j.
    """

    name = 'kilian'
    DEFECTS = (None, 'reuse_key')

    def __init__(self, program: PermBranchingProgram, input_sizes: Sequence[int] = None,
                 defect: Optional[str] = None):
        if defect not in self.DEFECTS:
            raise ValueError(f"Unknown defect '{defect}'. Known: {self.DEFECTS[1:]}")
        input_sizes = tuple(input_sizes or program.implied_input_sizes())
        if len(input_sizes) < program.client_count:
            raise DimensionError(f"Program reads {program.client_count} clients, got {len(input_sizes)} sizes")
        super().__init__(input_sizes)
        self.program = program
        self.group = program.group
        self.defect = defect
        self._owned = [
            [j for j, ins in enumerate(program.instructions) if ins.leaf.client == c]
            for c in range(self.client_count)
        ]
        self._owner_slot = {}
        for c, owned in enumerate(self._owned):
            for slot, j in enumerate(owned):
                self._owner_slot[j] = (c, slot)

    @property
    def length(self) -> int:
        return len(self.program)

    @property
    def key_count(self) -> int:
        if self.defect == 'reuse_key':
            return self.group.order
        return self.group.order ** (self.length - 1)

    @property
    def message_alphabets(self) -> Tuple[int, ...]:
        return tuple(self.group.order ** len(owned) for owned in self._owned)

    def _expand_key(self, key) -> Tuple[int, ...]:
        if self.defect == 'reuse_key':
            return (key[0],) * (self.length - 1)
        return tuple(key)

    def iter_keys(self):
        if self.defect == 'reuse_key':
            return ((g,) for g in range(self.group.order))
        return itertools.product(range(self.group.order), repeat=self.length - 1)

    def sample_keys(self, rng, size):
        width = 1 if self.defect == 'reuse_key' else self.length - 1
        return rng.integers(self.group.order, size=(size, width))

    def _padded_key(self, key) -> List[int]:
        e = self.group.identity
        return [e] + list(self._expand_key(key)) + [e]

    def encode(self, client, x, key):
        if not 0 <= x < self.input_sizes[client]:
            raise ValueError(f"Input {x} outside client {client}'s alphabet")
        g = self.group
        pads = self._padded_key(key)
        messages = []
        for j in self._owned[client]:
            ins = self.program.instructions[j]
            sigma = ins.if_one if (x >> ins.leaf.bit) & 1 else ins.if_zero
            messages.append(g.mul(g.mul(g.inv(pads[j]), sigma), pads[j + 1]))
        return tuple(messages)

    def _ordered(self, messages) -> List[int]:
        return [messages[c][slot] for c, slot in (self._owner_slot[j] for j in range(self.length))]

    def decode(self, messages):
        result = self.group.product(self._ordered(messages))
        if result == self.group.identity:
            return 0
        if result == self.program.accept:
            return 1
        raise ProtocolError("Decoded product is neither identity nor accept")

    def transcript_matrix(self, inputs, keys):
        """Rows of h_1..h_L in program order."""
        g = self.group
        keys = np.asarray(keys, dtype=np.int64)
        if keys.ndim == 1:
            keys = keys[None, :]
        if self.defect == 'reuse_key':
            keys = np.repeat(keys[:, :1], self.length - 1, axis=1)
        trials = keys.shape[0]
        e = np.full((trials, 1), g.identity, dtype=np.int64)
        pads = np.hstack([e, keys, e])
        sigma = np.array(self.program.selected(inputs), dtype=np.int64)
        left = g.table[g.inverse[pads[:, :-1]], sigma[None, :]]
        return g.table[left, pads[:, 1:]]

    def decode_matrix(self, matrix):
        g = self.group
        state = np.full(matrix.shape[0], g.identity, dtype=np.int64)
        for column in matrix.T:
            state = g.table[state, column]
        return np.where(state == g.identity, 0, np.where(state == self.program.accept, 1, -1))

    def product_statistic(self, matrix):
        """Prefix product h_1 ... h_{L/2}, uniform on the group under perfect privacy."""
        g = self.group
        state = np.full(matrix.shape[0], g.identity, dtype=np.int64)
        for column in matrix[:, :max(1, self.length // 2)].T:
            state = g.table[state, column]
        return state

    def to_json(self):
        return {'protocol': self.name, 'program': self.program.to_json(), 'input_sizes': list(self.input_sizes),
                'key_bits': self.key_bits, 'defect': self.defect}


def kilian_randomize(program: PermBranchingProgram, input_sizes: Sequence[int] = None,
                     defect: Optional[str] = None) -> KilianProtocol:
    """Randomize a program into a PSM protocol; refuses programs that break the two-output invariant."""
    validate_program(program, input_sizes)
    return KilianProtocol(program, input_sizes=input_sizes, defect=defect)


def protocol_from_json(data: dict) -> PsmProtocol:
    kind = data.get('protocol')
    if kind == FknProtocol.name:
        return FknProtocol(data['truth_table'], defect=data.get('defect'))
    if kind == KilianProtocol.name:
        return KilianProtocol(PermBranchingProgram.from_json(data['program']),
                              input_sizes=data.get('input_sizes'), defect=data.get('defect'))
    raise ValueError(f"Unknown protocol '{kind}'")


# ---------------------------------------------------------------------------
# Verification

@dataclass(frozen=True)
class PsmVerificationReport:
    mode: str
    correctness_passed: bool
    privacy_passed: bool
    key_count: int
    correctness_counterexample: Optional[dict] = None
    privacy_counterexample: Optional[dict] = None
    p_values: Tuple[dict, ...] = field(default_factory=tuple)
    trials: Optional[int] = None
    seed: Optional[int] = None

    @property
    def passed(self) -> bool:
        return self.correctness_passed and self.privacy_passed

    def to_dict(self) -> dict:
        return {
            'mode': self.mode,
            'passed': self.passed,
            'correctness_passed': self.correctness_passed,
            'privacy_passed': self.privacy_passed,
            'key_count': self.key_count,
            'correctness_counterexample': self.correctness_counterexample,
            'privacy_counterexample': self.privacy_counterexample,
            'p_values': list(self.p_values),
            'trials': self.trials,
            'seed': self.seed,
        }


def _check_table(protocol: PsmProtocol, f) -> np.ndarray:
    table = np.asarray(f, dtype=np.int64)
    if table.shape != protocol.input_sizes:
        raise DimensionError(f"Truth table has shape {table.shape}, protocol inputs are {protocol.input_sizes}")
    return table


def _transcript_counts(protocol: PsmProtocol, inputs: List[Tuple[int, ...]]) -> Dict[Tuple, Counter]:
    work = protocol.key_count * len(inputs)
    if work > Config.ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"{work:,} (input, key) pairs exceed the enumeration budget of {Config.ENUMERATION_BUDGET:,}; "
            f"use sampled mode"
        )
    logger.debug("enumerating %d keys for %d inputs", protocol.key_count, len(inputs))
    return {x: Counter(protocol.transcript(x, key) for key in protocol.iter_keys()) for x in inputs}


def _verify_exhaustive(protocol: PsmProtocol, table: np.ndarray) -> PsmVerificationReport:
    inputs = _inputs_of(protocol.input_sizes)
    counts = _transcript_counts(protocol, inputs)

    correctness_counterexample = None
    for x in inputs:
        expected = int(table[x])
        for transcript in counts[x]:
            try:
                got = protocol.decode(transcript)
            except ProtocolError:
                got = None
            if got != expected:
                correctness_counterexample = {'input': list(x), 'transcript': [list(m) for m in transcript],
                                              'expected': expected, 'got': got}
                break
        if correctness_counterexample:
            break

    privacy_counterexample = None
    by_output = defaultdict(list)
    for x in inputs:
        by_output[int(table[x])].append(x)
    for output in sorted(by_output):
        reference, *others = by_output[output]
        for x in others:
            if counts[x] != counts[reference]:
                privacy_counterexample = {'inputs': [list(reference), list(x)], 'output': output}
                break
        if privacy_counterexample:
            break

    return PsmVerificationReport(
        mode='exhaustive',
        correctness_passed=correctness_counterexample is None,
        privacy_passed=privacy_counterexample is None,
        key_count=protocol.key_count,
        correctness_counterexample=correctness_counterexample,
        privacy_counterexample=privacy_counterexample,
    )


def _equality_p_value(a: np.ndarray, b: np.ndarray) -> float:
    """Chi-square two-sample test that a and b come from one categorical law."""
    values, inverse = np.unique(np.concatenate([a, b]), return_inverse=True)
    if values.size < 2:
        return 1.0
    table = np.zeros((2, values.size), dtype=np.int64)
    np.add.at(table[0], inverse[:a.size], 1)
    np.add.at(table[1], inverse[a.size:], 1)
    return float(chi2_contingency(table)[1])


def _verify_sampled(protocol: PsmProtocol, table: np.ndarray, trials: int, seed: int) -> PsmVerificationReport:
    inputs = _inputs_of(protocol.input_sizes)
    matrices = {}
    correctness_counterexample = None
    for index, x in enumerate(inputs):
        keys = protocol.sample_keys(counter_rng(seed, index, 0), trials)
        matrix = protocol.transcript_matrix(x, keys)
        matrices[x] = matrix
        decoded = protocol.decode_matrix(matrix)
        wrong = np.flatnonzero(decoded != int(table[x]))
        if wrong.size and correctness_counterexample is None:
            correctness_counterexample = {'input': list(x), 'transcript': matrix[wrong[0]].tolist(),
                                          'expected': int(table[x]), 'got': int(decoded[wrong[0]])}

    by_output = defaultdict(list)
    for x in inputs:
        by_output[int(table[x])].append(x)
    pairs = []
    for output in sorted(by_output):
        reference, *others = by_output[output]
        pairs.extend((reference, x) for x in others)
    positions = next(iter(matrices.values())).shape[1]
    tests = max(1, len(pairs) * (positions + 1))
    threshold = Config.PSM_SIGNIFICANCE / tests

    p_values = []
    privacy_counterexample = None
    for reference, x in pairs:
        a, b = matrices[reference], matrices[x]
        p_positions = [_equality_p_value(a[:, k], b[:, k]) for k in range(positions)]
        p_product = _equality_p_value(protocol.product_statistic(a), protocol.product_statistic(b))
        min_p = min(p_positions + [p_product])
        p_values.append({'inputs': [list(reference), list(x)], 'min_position_p': min(p_positions),
                         'product_p': p_product})
        if min_p < threshold and privacy_counterexample is None:
            privacy_counterexample = {'inputs': [list(reference), list(x)], 'p_value': min_p,
                                      'threshold': threshold}

    return PsmVerificationReport(
        mode='sampled',
        correctness_passed=correctness_counterexample is None,
        privacy_passed=privacy_counterexample is None,
        key_count=protocol.key_count,
        correctness_counterexample=correctness_counterexample,
        privacy_counterexample=privacy_counterexample,
        p_values=tuple(p_values),
        trials=trials,
        seed=seed,
    )


def psm_verify(protocol: PsmProtocol, f, mode: str = 'exhaustive', trials: int = 10000,
               seed: int = 0) -> PsmVerificationReport:
    """Check decoder correctness and privacy (equal transcript laws for equal outputs).

    Exhaustive mode is exact and refuses key domains beyond the enumeration budget.
    Sampled mode uses per-position chi-square tests plus a product statistic with a
    Bonferroni-corrected family-wise level of Config.PSM_SIGNIFICANCE.
    """
    table = _check_table(protocol, f)
    if mode == 'exhaustive':
        report = _verify_exhaustive(protocol, table)
    elif mode == 'sampled':
        if trials < 2:
            raise ValueError(f"Sampled verification needs at least 2 trials, got {trials}")
        report = _verify_sampled(protocol, table, trials, seed)
    else:
        raise ValueError(f"Unknown verification mode '{mode}'")
    if not report.passed:
        logger.warning("PSM verification failed (%s): correctness=%s privacy=%s",
                       mode, report.correctness_passed, report.privacy_passed)
    return report


# ---------------------------------------------------------------------------
# PSM -> SDHT

@dataclass(frozen=True)
class CostTargets:
    """Reference communication/key costs n**exponent of the asymptotic construction."""
    comm_exponent: int
    key_exponent: int
    comm_reference: int
    key_reference: int

    def to_dict(self) -> dict:
        return {'comm_exponent': self.comm_exponent, 'key_exponent': self.key_exponent,
                'comm_reference': self.comm_reference, 'key_reference': self.key_reference}


def es25_cost_targets(n: int, alphabet_size: int) -> CostTargets:
    """Communication exponent 2*ceil(|X|/3) and key exponent one higher, evaluated at n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if alphabet_size < 1:
        raise ValueError(f"Alphabet size must be >= 1, got {alphabet_size}")
    exponent = 2 * math.ceil(alphabet_size / 3)
    return CostTargets(exponent, exponent + 1, n ** exponent, n ** (exponent + 1))


def _product_law(mu: FiniteDistribution, n: int) -> np.ndarray:
    return reduce(np.multiply.outer, [mu.probs] * n)


def _tv_dicts(a: Dict[Any, float], b: Dict[Any, float]) -> float:
    support = sorted(set(a) | set(b))
    return 0.5 * sum(abs(a.get(t, 0.0) - b.get(t, 0.0)) for t in support)


def psm_to_sdht(detector_table, protocol: PsmProtocol, H0: Sequence[FiniteDistribution],
                H1: Sequence[FiniteDistribution], mode: str = 'exact',
                verification: Optional[PsmVerificationReport] = None, trials: int = 10000,
                seed: int = 0, tolerance: float = 1e-9) -> EvaluationReport:
    """Evaluate the SDHT scheme in which clients run a verified PSM for a symmetric detector.

    epsilon is the detector's worst-case error under H0/H1; delta is the largest TV between
    transcript laws within a class. Raises AuditFailure unless delta <= epsilon + tolerance
    (exact) or delta <= epsilon + 4 * stderr (sampled).
    """
    if mode not in ('exact', 'sampled'):
        raise ValueError(f"Unknown mode '{mode}'")
    table = np.asarray(detector_table, dtype=np.int64)
    if table.shape != protocol.input_sizes:
        raise DimensionError(f"Detector table has shape {table.shape}, protocol inputs are {protocol.input_sizes}")
    if len(set(protocol.input_sizes)) != 1:
        raise DimensionError("All clients must share one sample alphabet")
    if not is_symmetric_table(table):
        raise ValueError("Detector table must be symmetric in the clients")
    if not H0 or not H1:
        raise ValueError("Both hypothesis classes need at least one distribution")
    n, alphabet = table.ndim, table.shape[0]
    for mu in list(H0) + list(H1):
        if mu.size != alphabet:
            raise DimensionError(f"Distribution has {mu.size} symbols, samples have {alphabet}")
    if alphabet ** n > Config.ENUMERATION_BUDGET:
        raise EnumerationBudgetError(f"{alphabet ** n:,} inputs exceed the enumeration budget")

    if verification is None:
        feasible = protocol.key_count * alphabet ** n <= Config.ENUMERATION_BUDGET
        verification = psm_verify(protocol, table, 'exhaustive' if feasible else 'sampled', trials, seed)
    if not verification.passed:
        raise UnverifiedProtocolError("Protocol failed verification for this detector; refusing to use it")

    classes = [(0, mu) for mu in H0] + [(1, mu) for mu in H1]
    alphas = [float((_product_law(mu, n) * table).sum()) for _, mu in classes]
    epsilon = max(a if label == 0 else 1.0 - a for (label, _), a in zip(classes, alphas))
    epsilon = min(1.0, max(0.0, epsilon))

    delta_stderr = None
    if len(H0) < 2 and len(H1) < 2:
        # no pair shares a class
        delta, allowance = 0.0, tolerance
        method = 'exact' if mode == 'exact' else 'monte_carlo'
        if mode == 'sampled':
            delta_stderr = 0.0
    elif mode == 'exact':
        inputs = _inputs_of(protocol.input_sizes)
        counts = _transcript_counts(protocol, inputs)
        laws = []
        for _, mu in classes:
            joint = _product_law(mu, n)
            law = defaultdict(float)
            for x in inputs:
                weight = joint[x] / protocol.key_count
                if weight == 0.0:
                    continue
                for transcript, count in counts[x].items():
                    law[transcript] += weight * count
            laws.append(law)
        delta = 0.0
        for i, j in itertools.combinations(range(len(classes)), 2):
            if classes[i][0] == classes[j][0]:
                delta = max(delta, _tv_dicts(laws[i], laws[j]))
        allowance = tolerance
        method = 'exact'
    elif mode == 'sampled':
        estimates = []
        for d, (_, mu) in enumerate(classes):
            rng = counter_rng(seed, d, 1)
            xs = rng.choice(alphabet, size=(trials, n), p=mu.probs)
            keys = protocol.sample_keys(rng, trials)
            decoded = np.empty(trials, dtype=np.int64)
            for x in sorted(set(map(tuple, xs.tolist()))):
                rows = np.flatnonzero((xs == np.array(x)).all(axis=1))
                key_rows = keys[rows] if isinstance(keys, np.ndarray) else [keys[r] for r in rows]
                decoded[rows] = protocol.decode_matrix(protocol.transcript_matrix(x, key_rows))
            if (decoded < 0).any():
                raise AuditFailure("Sampled transcript failed to decode")
            estimates.append(float(decoded.mean()))
        delta, delta_stderr = 0.0, 0.0
        for i, j in itertools.combinations(range(len(classes)), 2):
            if classes[i][0] != classes[j][0]:
                continue
            gap = abs(estimates[i] - estimates[j])
            err = math.sqrt((estimates[i] * (1 - estimates[i]) + estimates[j] * (1 - estimates[j])) / trials)
            if gap > delta or (gap == delta and err > delta_stderr):
                delta, delta_stderr = gap, err
        allowance = 4.0 * delta_stderr + tolerance
        method = 'monte_carlo'
    else:
        raise ValueError(f"Unknown mode '{mode}'")

    if delta > epsilon + allowance:
        raise AuditFailure(f"Measured delta {delta:.6g} exceeds epsilon {epsilon:.6g} + {allowance:.3g}")

    return EvaluationReport(
        epsilon=epsilon,
        delta=min(1.0, delta),
        comm_bits=protocol.comm_bits,
        key_bits=protocol.key_bits,
        method=method,
        trials=trials if mode == 'sampled' else None,
        seed=seed if mode == 'sampled' else None,
        delta_stderr=delta_stderr,
    )
