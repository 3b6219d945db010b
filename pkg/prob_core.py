"""Finite distributions, divergences, and exact n-sample laws of exchangeable message processes.

Exchangeable laws are finite mixtures of i.i.d. product laws. Every sequence with the
same histogram has the same probability under such a law, so exact quantities are sums
over histograms (compositions of n into m parts) instead of over all m**n sequences.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence, Tuple

import numpy as np
from scipy.special import comb, gammaln, xlogy

from config import Config

logger = logging.getLogger(__name__)

# Tolerance for probability vectors summing to one
PROB_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when two objects live on different alphabets or sample counts."""


class EnumerationBudgetError(ValueError):
    """Raised when an exact computation would enumerate more than the configured budget."""


class FiniteDistribution:
    """Probability vector over alphabet indices 0..m-1. Immutable."""

    __slots__ = ('_probs',)

    def __init__(self, probs):
        arr = np.array(probs, dtype=float).ravel()
        if arr.size < 1:
            raise ValueError("A distribution needs at least one symbol")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"Probabilities must be finite, got {arr.tolist()}")
        if arr.min() < -PROB_TOL or arr.max() > 1.0 + PROB_TOL:
            raise ValueError(f"Probabilities must lie in [0, 1], got {arr.tolist()}")
        arr = np.clip(arr, 0.0, 1.0)
        total = float(arr.sum())
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"Probabilities sum to {total!r}, expected 1")
        arr.flags.writeable = False
        self._probs = arr

    @classmethod
    def bernoulli(cls, p: float) -> 'FiniteDistribution':
        """Ber(p): symbol 1 carries mass p."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"Bernoulli parameter must be in [0, 1], got {p}")
        return cls([1.0 - p, p])

    @classmethod
    def uniform(cls, m: int) -> 'FiniteDistribution':
        if m < 1:
            raise ValueError(f"Alphabet size must be >= 1, got {m}")
        return cls(np.full(m, 1.0 / m))

    @classmethod
    def point_mass(cls, m: int, symbol: int) -> 'FiniteDistribution':
        if not 0 <= symbol < m:
            raise ValueError(f"Symbol {symbol} outside alphabet of size {m}")
        probs = np.zeros(m)
        probs[symbol] = 1.0
        return cls(probs)

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def size(self) -> int:
        return int(self._probs.size)

    def __len__(self):
        return self.size

    def __getitem__(self, symbol):
        return float(self._probs[symbol])

    def __eq__(self, other):
        if not isinstance(other, FiniteDistribution):
            return NotImplemented
        return self.size == other.size and bool(np.array_equal(self._probs, other._probs))

    def __hash__(self):
        return hash(tuple(self._probs.tolist()))

    def __repr__(self):
        return f"FiniteDistribution({self._probs.tolist()})"

    def isclose(self, other: 'FiniteDistribution', tol: float = PROB_TOL) -> bool:
        _check_same_alphabet(self, other)
        return bool(np.max(np.abs(self._probs - other._probs)) <= tol)

    def tolist(self):
        return self._probs.tolist()


@dataclass(frozen=True)
class Histogram:
    """Symbol counts of an n-sample sequence."""
    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if not counts:
            raise ValueError("A histogram needs at least one symbol")
        if any(c < 0 for c in counts):
            raise ValueError(f"Histogram counts must be non-negative, got {counts}")
        object.__setattr__(self, 'counts', counts)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def alphabet_size(self) -> int:
        return len(self.counts)


def _canonical_key(component):
    weight, marginal = component
    return tuple(marginal.probs.tolist()), weight


@dataclass(frozen=True)
class ExchangeableLaw:
    """Mixture of i.i.d. n-sample laws, given as (weight, marginal) pairs."""
    n: int
    components: Tuple[Tuple[float, FiniteDistribution], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Sample count must be >= 1, got {self.n}")
        components = tuple((float(w), m) for w, m in self.components)
        if not components:
            raise ValueError("A law needs at least one component")
        if any(w < 0 for w, _ in components):
            raise ValueError("Mixture weights must be non-negative")
        total = sum(w for w, _ in components)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"Mixture weights sum to {total!r}, expected 1")
        sizes = {m.size for _, m in components}
        if len(sizes) != 1:
            raise DimensionError(f"Mixture marginals live on different alphabets: {sorted(sizes)}")
        # canonical order so that equal mixtures evaluate bit-identically
        object.__setattr__(self, 'components', tuple(sorted(components, key=_canonical_key)))

    @property
    def alphabet_size(self) -> int:
        return self.components[0][1].size


def _check_same_alphabet(P: FiniteDistribution, Q: FiniteDistribution):
    if P.size != Q.size:
        raise DimensionError(f"Alphabet mismatch: {P.size} vs {Q.size}")


def _check_same_shape(L1: ExchangeableLaw, L2: ExchangeableLaw):
    if L1.n != L2.n:
        raise DimensionError(f"Sample count mismatch: {L1.n} vs {L2.n}")
    if L1.alphabet_size != L2.alphabet_size:
        raise DimensionError(f"Alphabet mismatch: {L1.alphabet_size} vs {L2.alphabet_size}")


def tv_distance(P: FiniteDistribution, Q: FiniteDistribution) -> float:
    """Total variation distance 1/2 * sum |P(x) - Q(x)|."""
    _check_same_alphabet(P, Q)
    return 0.5 * float(np.abs(P.probs - Q.probs).sum())


def _hellinger_terms(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # (sqrt p - sqrt q) written as (p - q) / (sqrt p + sqrt q) to avoid cancellation
    denom = np.sqrt(p) + np.sqrt(q)
    safe = np.where(denom > 0, denom, 1.0)
    diff = np.where(denom > 0, (p - q) / safe, 0.0)
    return diff * diff


def hellinger_sq(P: FiniteDistribution, Q: FiniteDistribution) -> float:
    """Squared Hellinger distance sum (sqrt P - sqrt Q)^2, in [0, 2]."""
    _check_same_alphabet(P, Q)
    return float(_hellinger_terms(P.probs, Q.probs).sum())


def best_deterministic_test(P: FiniteDistribution, Q: FiniteDistribution):
    """Deterministic test maximizing P[D=0] + Q[D=1].

    Returns the accept set {x : Q(x) > P(x)} (ties excluded) and its score 1 + tv(P, Q).
    """
    _check_same_alphabet(P, Q)
    accept_set = frozenset(int(x) for x in np.flatnonzero(Q.probs > P.probs))
    return accept_set, 1.0 + tv_distance(P, Q)


def deterministic_test_score(P: FiniteDistribution, Q: FiniteDistribution, accept_set) -> float:
    """P[D=0] + Q[D=1] for the test D(x) = 1{x in accept_set}."""
    _check_same_alphabet(P, Q)
    mask = np.zeros(P.size, dtype=bool)
    mask[list(accept_set)] = True
    return float(P.probs[~mask].sum() + Q.probs[mask].sum())


def iid_law(marginal: FiniteDistribution, n: int) -> ExchangeableLaw:
    """Law of n i.i.d. draws from marginal."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return ExchangeableLaw(n, ((1.0, marginal),))


def mix_laws(components: Sequence[Tuple[float, ExchangeableLaw]]) -> ExchangeableLaw:
    """Flatten a weighted mixture of exchangeable laws into one law."""
    if not components:
        raise ValueError("Nothing to mix")
    first = components[0][1]
    for _, law in components[1:]:
        _check_same_shape(first, law)
    total = sum(w for w, _ in components)
    if abs(total - 1.0) > PROB_TOL:
        raise ValueError(f"Mixture weights sum to {total!r}, expected 1")
    flat = [(w * wc, marginal) for w, law in components for wc, marginal in law.components]
    return ExchangeableLaw(first.n, tuple(flat))


def histogram_count(n: int, m: int) -> int:
    """Number of histograms of n samples over m symbols, C(n+m-1, m-1)."""
    return int(comb(n + m - 1, m - 1, exact=True))


def check_enumeration_budget(n: int, m: int) -> int:
    count = histogram_count(n, m)
    if count > Config.ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"{count:,} histograms for n={n}, m={m} exceed the enumeration budget of "
            f"{Config.ENUMERATION_BUDGET:,}; use monte_carlo_evaluate instead"
        )
    logger.debug("enumerating %d histograms (n=%d, m=%d)", count, n, m)
    return count


def histogram_batches(n: int, m: int, batch_size: int = 65536) -> Iterator[np.ndarray]:
    """Yield all histograms of n samples over m symbols as int arrays of shape (batch, m)."""
    if m == 1:
        yield np.array([[n]], dtype=np.int64)
        return
    bars_iter = itertools.combinations(range(n + m - 1), m - 1)
    while True:
        chunk = list(itertools.islice(bars_iter, batch_size))
        if not chunk:
            return
        bars = np.array(chunk, dtype=np.int64).reshape(-1, m - 1)
        rows = bars.shape[0]
        padded = np.hstack([
            np.full((rows, 1), -1, dtype=np.int64),
            bars,
            np.full((rows, 1), n + m - 1, dtype=np.int64),
        ])
        yield np.diff(padded, axis=1) - 1


def iter_histograms(n: int, m: int) -> Iterator[Histogram]:
    for batch in histogram_batches(n, m):
        for row in batch:
            yield Histogram(tuple(row.tolist()))


def _histogram_probs(law: ExchangeableLaw, counts: np.ndarray) -> np.ndarray:
    """Probability of the event 'histogram equals row' for each row of counts."""
    log_multinomial = gammaln(law.n + 1) - gammaln(counts + 1).sum(axis=1)
    total = np.zeros(counts.shape[0])
    for weight, marginal in law.components:
        if weight == 0.0:
            continue
        log_seq = xlogy(counts, marginal.probs).sum(axis=1)
        total += weight * np.exp(log_multinomial + log_seq)
    return total


def histogram_prob(law: ExchangeableLaw, h: Histogram) -> float:
    if h.n != law.n:
        raise DimensionError(f"Histogram has n={h.n}, law has n={law.n}")
    if h.alphabet_size != law.alphabet_size:
        raise DimensionError(f"Histogram alphabet {h.alphabet_size} vs law alphabet {law.alphabet_size}")
    return float(_histogram_probs(law, np.array([h.counts], dtype=np.int64))[0])


def law_tv(L1: ExchangeableLaw, L2: ExchangeableLaw) -> float:
    """Exact total variation distance between two exchangeable n-sample laws."""
    _check_same_shape(L1, L2)
    check_enumeration_budget(L1.n, L1.alphabet_size)
    total = 0.0
    for counts in histogram_batches(L1.n, L1.alphabet_size):
        total += float(np.abs(_histogram_probs(L1, counts) - _histogram_probs(L2, counts)).sum())
    return min(1.0, max(0.0, 0.5 * total))


def law_hellinger_sq(L1: ExchangeableLaw, L2: ExchangeableLaw) -> float:
    """Exact squared Hellinger distance between two exchangeable n-sample laws."""
    _check_same_shape(L1, L2)
    check_enumeration_budget(L1.n, L1.alphabet_size)
    total = 0.0
    for counts in histogram_batches(L1.n, L1.alphabet_size):
        total += float(_hellinger_terms(_histogram_probs(L1, counts), _histogram_probs(L2, counts)).sum())
    return min(2.0, total)


def symmetric_event_prob(law: ExchangeableLaw, predicate: Callable[[Histogram], int]) -> float:
    """Probability that the histogram of an n-sample sequence satisfies predicate.

    Objects exposing a vectorized ``decide_many(counts)`` (detectors) are evaluated batch-wise.
    """
    check_enumeration_budget(law.n, law.alphabet_size)
    vectorized = getattr(predicate, 'decide_many', None)
    total = 0.0
    for counts in histogram_batches(law.n, law.alphabet_size):
        if vectorized is not None:
            mask = np.asarray(vectorized(counts)).astype(bool)
        else:
            mask = np.fromiter(
                (bool(predicate(Histogram(tuple(row.tolist())))) for row in counts),
                dtype=bool, count=counts.shape[0],
            )
        total += float(_histogram_probs(law, counts)[mask].sum())
    return min(1.0, max(0.0, total))
