"""Stochastic channels and the channel constructions used by the SDHT schemes.

Convention: Ber(p) puts mass p on symbol 1. A channel is stored row-major, one row
per input symbol, so W.rows[x, y] = W(y|x).
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from prob_core import PROB_TOL, DimensionError, FiniteDistribution, tv_distance

logger = logging.getLogger(__name__)

# Residual accepted when solving for a collinearity witness
COLLINEARITY_TOL = 1e-10

# Interior margin kept by the separating channel's scaled direction
SEPARATING_MARGIN = 1e-6


class ConstructionImpossibleError(ValueError):
    """Raised when a requested channel provably cannot exist."""


class DegenerateClassError(ValueError):
    """Raised when the members of one hypothesis class coincide where they must differ."""


class ClassesNotDistinctError(ValueError):
    """Raised when a member of one class coincides with a member of the other."""


class OrderingError(ValueError):
    """Raised when likelihood ratios are not in the order an operation requires."""


class ExcludedChannelError(ValueError):
    """Raised for channels whose rows coincide (they carry no information about the input)."""


class Channel:
    """Row-stochastic matrix W(y|x). Immutable."""

    __slots__ = ('_rows',)

    def __init__(self, rows):
        arr = np.array(rows, dtype=float)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Channel rows must form a non-empty matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Channel entries must be finite")
        if arr.min() < -PROB_TOL or arr.max() > 1.0 + PROB_TOL:
            raise ValueError("Channel entries must lie in [0, 1]")
        arr = np.clip(arr, 0.0, 1.0)
        sums = arr.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_TOL)
        if bad.size:
            raise ValueError(f"Channel row {int(bad[0])} sums to {float(sums[bad[0]])!r}, expected 1")
        arr.flags.writeable = False
        self._rows = arr

    @classmethod
    def identity(cls, m: int) -> 'Channel':
        return cls(np.eye(m))

    @classmethod
    def constant(cls, m_in: int, m_out: int, symbol: int) -> 'Channel':
        rows = np.zeros((m_in, m_out))
        rows[:, symbol] = 1.0
        return cls(rows)

    @classmethod
    def flip(cls) -> 'Channel':
        """Binary channel y = 1 - x (XOR with a key bit of 1)."""
        return cls([[0.0, 1.0], [1.0, 0.0]])

    @classmethod
    def from_bernoulli_rows(cls, ps: Sequence[float]) -> 'Channel':
        """Binary-output channel whose row x is Ber(ps[x])."""
        return cls([[1.0 - p, p] for p in ps])

    @classmethod
    def deterministic(cls, mapping: Sequence[int], m_out: int) -> 'Channel':
        rows = np.zeros((len(mapping), m_out))
        rows[np.arange(len(mapping)), list(mapping)] = 1.0
        return cls(rows)

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    @property
    def input_size(self) -> int:
        return int(self._rows.shape[0])

    @property
    def output_size(self) -> int:
        return int(self._rows.shape[1])

    def row(self, x: int) -> FiniteDistribution:
        return FiniteDistribution(self._rows[x])

    def __eq__(self, other):
        if not isinstance(other, Channel):
            return NotImplemented
        return self._rows.shape == other._rows.shape and bool(np.array_equal(self._rows, other._rows))

    def __hash__(self):
        return hash((self._rows.shape, tuple(self._rows.ravel().tolist())))

    def __repr__(self):
        return f"Channel({self._rows.tolist()})"

    def to_json(self) -> dict:
        return {'rows': self._rows.tolist()}

    @classmethod
    def from_json(cls, data) -> 'Channel':
        if isinstance(data, dict):
            if 'rows' not in data:
                raise ValueError("Channel JSON needs a 'rows' matrix")
            data = data['rows']
        return cls(data)

    @classmethod
    def load(cls, path) -> 'Channel':
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Channel file {path} not found")
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_json(json.load(f))


def _require_binary_input(W: Channel):
    if W.input_size != 2:
        raise ValueError(f"Expected a binary-input channel, got {W.input_size} inputs")


def push_forward(W: Channel, mu: FiniteDistribution) -> FiniteDistribution:
    """Output law sum_x mu(x) W(.|x)."""
    if mu.size != W.input_size:
        raise DimensionError(f"Channel takes {W.input_size} input symbols, distribution has {mu.size}")
    return FiniteDistribution(mu.probs @ W.rows)


def compose(W: Channel, R: Channel) -> Channel:
    """Channel u -> x -> y, i.e. (W o R)(y|u) = sum_x R(x|u) W(y|x)."""
    if R.output_size != W.input_size:
        raise DimensionError(f"Cannot feed {R.output_size} symbols into a channel taking {W.input_size}")
    return Channel(R.rows @ W.rows)


@dataclass(frozen=True)
class CollinearityWitness:
    """theta * mu_a + (1 - theta) * mu_b == mu_c."""
    theta: float
    a: int
    b: int
    c: int
    degenerate: bool = False


def collinearity_check(mu0: FiniteDistribution, mu1: FiniteDistribution,
                       mu2: FiniteDistribution) -> Optional[CollinearityWitness]:
    """Return a witness that one distribution is a convex combination of the other two, or None."""
    mus = (mu0, mu1, mu2)
    if not (mu0.size == mu1.size == mu2.size):
        raise DimensionError(f"Alphabet mismatch: {[m.size for m in mus]}")

    for i, j in ((0, 1), (0, 2), (1, 2)):
        if np.max(np.abs(mus[i].probs - mus[j].probs)) <= PROB_TOL:
            k = 3 - i - j
            logger.warning("collinearity check on a degenerate triple: inputs %d and %d coincide", i, j)
            return CollinearityWitness(theta=1.0, a=i, b=k, c=j, degenerate=True)

    for c in range(3):
        a, b = (x for x in range(3) if x != c)
        d = mus[a].probs - mus[b].probs
        e = mus[c].probs - mus[b].probs
        theta = float(d @ e) / float(d @ d)
        if theta < -COLLINEARITY_TOL or theta > 1.0 + COLLINEARITY_TOL:
            continue
        theta = min(1.0, max(0.0, theta))
        if float(np.max(np.abs(theta * d - e))) <= COLLINEARITY_TOL:
            return CollinearityWitness(theta=theta, a=a, b=b, c=c)
    return None


def separating_channel(mu0: FiniteDistribution, mu1: FiniteDistribution, mu2: FiniteDistribution,
                       direction: Optional[Sequence[float]] = None,
                       scale: Optional[float] = None) -> Channel:
    """Binary-output channel sending mu0 and mu1 to the same Bernoulli and mu2 to a different one.

    W(1|x) = scale * v[x] + 1/2 where v is orthogonal to mu0 - mu1 and positively correlated
    with mu0 - mu2. By default v is the component of mu0 - mu2 orthogonal to mu0 - mu1 and the
    scale is the largest keeping every W(1|x) at least SEPARATING_MARGIN away from 0 and 1.
    """
    witness = collinearity_check(mu0, mu1, mu2)
    if witness is not None:
        raise ConstructionImpossibleError(
            f"Distributions are collinear (theta={witness.theta:.6g}, a={witness.a}, b={witness.b}, "
            f"c={witness.c}); no channel separates {{mu0, mu1}} from {{mu2}} without a shared key"
        )
    u1 = mu0.probs - mu1.probs
    u2 = mu0.probs - mu2.probs

    if direction is None:
        v = u2 - (float(u2 @ u1) / float(u1 @ u1)) * u1
        v = v / np.max(np.abs(v))
    else:
        v = np.array(direction, dtype=float)
        if v.shape != u1.shape:
            raise DimensionError(f"Direction has {v.size} entries, alphabet has {u1.size}")
        if abs(float(v @ u1)) > 1e-12 * (1.0 + np.linalg.norm(v)):
            raise ValueError("Direction must be orthogonal to mu0 - mu1")
        if float(v @ u2) <= 0:
            raise ValueError("Direction must have a positive inner product with mu0 - mu2")

    if scale is None:
        scale = (0.5 - SEPARATING_MARGIN) / float(np.max(np.abs(v)))
    v_prime = scale * v + 0.5
    if v_prime.min() < 0.0 or v_prime.max() > 1.0:
        raise ValueError(f"Scale {scale} pushes W(1|x) outside [0, 1]")
    return Channel(np.column_stack([1.0 - v_prime, v_prime]))


def separation_margin(W: Channel, mu0: FiniteDistribution, mu2: FiniteDistribution) -> float:
    """Distance between the output laws of the two classes."""
    return tv_distance(push_forward(W, mu0), push_forward(W, mu2))


def sign_channel(mu0: FiniteDistribution, mu1: FiniteDistribution) -> Channel:
    """Deterministic channel x -> 1{mu0(x) > mu1(x)}."""
    if mu0.size != mu1.size:
        raise DimensionError(f"Alphabet mismatch: {mu0.size} vs {mu1.size}")
    if np.max(np.abs(mu0.probs - mu1.probs)) <= PROB_TOL:
        raise ValueError("sign_channel needs two different distributions")
    mapping = (mu0.probs > mu1.probs).astype(int).tolist()
    return Channel.deterministic(mapping, 2)


def symmetrizer_coefficients(p0: float, p1: float) -> Tuple[float, float]:
    """Slope m and intercept k of f(t) = P(Y=0) = k + m*t with f(p0) + f(p1) = 1.

    m is the largest positive slope keeping both W(0|0) = k and W(0|1) = k + m in [0, 1].
    """
    s = p0 + p1
    m = min(1.0 / (2.0 - s), 1.0 / s)
    k = (1.0 - m * s) / 2.0
    return m, k


def bernoulli_symmetrizer(p0: float, p1: float, p2: float) -> Tuple[Channel, float, float]:
    """Binary channel mapping Ber(p0), Ber(p1) to a symmetric pair and Ber(p2) elsewhere.

    Returns (W, p, q) with p = f(p0), f(p1) = 1 - p and q = f(p2), where f(t) = P(Y=0)
    under input Ber(t).
    """
    for value in (p0, p1, p2):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"Bernoulli parameters must be in [0, 1], got {value}")
    if abs(p0 - p1) <= PROB_TOL:
        raise DegenerateClassError(f"p0 and p1 coincide ({p0}); nothing to symmetrize")
    if min(abs(p2 - p0), abs(p2 - p1)) <= PROB_TOL:
        raise ClassesNotDistinctError(f"p2={p2} coincides with a null-class parameter")

    m, k = symmetrizer_coefficients(p0, p1)
    W = Channel([[k, 1.0 - k], [k + m, 1.0 - k - m]])
    p = push_forward(W, FiniteDistribution.bernoulli(p0))[0]
    q = push_forward(W, FiniteDistribution.bernoulli(p2))[0]
    return W, p, q


def merge_symbols(W: Channel, i: int, j: int) -> Channel:
    """Merge output symbols i and j into one supersymbol at position min(i, j)."""
    if i == j or not (0 <= i < W.output_size and 0 <= j < W.output_size):
        raise ValueError(f"Cannot merge symbols {i} and {j} of a {W.output_size}-symbol channel")
    lo, hi = sorted((i, j))
    rows = np.array(W.rows)
    rows[:, lo] += rows[:, hi]
    return Channel(np.delete(rows, hi, axis=1))


def merge_hellinger_delta(W: Channel, i: int, j: int,
                          mu_a: FiniteDistribution, mu_b: FiniteDistribution) -> float:
    """Loss in squared Hellinger distance between the output laws when symbols i and j merge.

    2 * (sqrt((Pi + Pj)(Qi + Qj)) - sqrt(Pi Qi) - sqrt(Pj Qj)); zero iff Pi/Qi = Pj/Qj.
    """
    P = push_forward(W, mu_a).probs
    Q = push_forward(W, mu_b).probs
    merged = np.sqrt((P[i] + P[j]) * (Q[i] + Q[j]))
    return float(2.0 * (merged - np.sqrt(P[i] * Q[i]) - np.sqrt(P[j] * Q[j])))


def likelihood_ratios(W: Channel) -> np.ndarray:
    """W(y|0) / W(y|1) per output symbol; +inf where W(y|1) = 0."""
    _require_binary_input(W)
    a0, a1 = W.rows[0], W.rows[1]
    safe = np.where(a1 > 0, a1, 1.0)
    return np.where(a1 > 0, a0 / safe, np.inf)


def sort_by_likelihood_ratio(W: Channel) -> Tuple[Channel, Tuple[int, ...]]:
    """Reorder output symbols by ascending likelihood ratio; ties keep index order."""
    order = np.argsort(likelihood_ratios(W), kind='stable')
    return Channel(W.rows[:, order]), tuple(int(y) for y in order)


def gamma_transform(W: Channel, gamma: float) -> Channel:
    """Mix W with the constant channel onto the lowest-ratio symbol: (1-gamma) W + gamma e_0."""
    _require_binary_input(W)
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    ratios = likelihood_ratios(W)
    if any(ratios[y] > ratios[y + 1] for y in range(len(ratios) - 1)):
        raise OrderingError(
            "Output symbols must be sorted by likelihood ratio ascending; "
            "call sort_by_likelihood_ratio first"
        )
    rows = (1.0 - gamma) * W.rows
    rows[:, 0] += gamma
    return Channel(rows)


def gamma_star(a0: float, a1: float, b0: float, b1: float) -> float:
    """Smallest gamma making (a0(1-g)+g)/(a1(1-g)+g) equal b0/b1.

    Requires a0/a1 < b0/b1 <= 1. Returns N/(M+N) with N = a1*b0 - a0*b1 and M = b1 - b0.
    """
    if a1 <= 0 or b1 <= 0:
        raise OrderingError(f"Denominators must be positive, got a1={a1}, b1={b1}")
    if min(a0, b0) < 0:
        raise OrderingError("Channel entries must be non-negative")
    if b0 > b1 * (1.0 + 1e-15):
        raise OrderingError(f"Second ratio b0/b1={b0 / b1} exceeds 1")
    lhs, rhs = a0 * b1, a1 * b0
    N = rhs - lhs
    if abs(N) <= 1e-14 * (abs(lhs) + abs(rhs)):
        return 0.0
    if N < 0:
        raise OrderingError(f"Ratios out of order: a0/a1={a0 / a1} > b0/b1={b0 / b1}")
    M = max(b1 - b0, 0.0)
    return N / (M + N)
