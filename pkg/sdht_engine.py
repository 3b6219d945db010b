"""SDHT scheme assembly and evaluation of correctness error (epsilon) and privacy (delta).

A scheme is a uniform key, one channel per key applied by every client, and a symmetric
detector on the server's message histogram. Exact evaluation sums over histograms; the
Monte Carlo path covers large n and clients with different channels.
"""
import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.special import xlogy

from channels import (
    Channel,
    bernoulli_symmetrizer,
    collinearity_check,
    compose,
    push_forward,
    separating_channel,
    sign_channel,
)
from prob_core import (
    PROB_TOL,
    DimensionError,
    ExchangeableLaw,
    FiniteDistribution,
    Histogram,
    iid_law,
    law_tv,
    mix_laws,
    symmetric_event_prob,
)
from rng import counter_rng, map_blocks

logger = logging.getLogger(__name__)

# Pushforwards of one class must agree to this precision for a separating channel
SEPARATION_TOL = 1e-10

# Stream tag for det' resampling draws
_RESAMPLE_STREAM = 0xD7


class NotSeparatingChannelError(ValueError):
    """Raised when a channel does not map each class to a single distinct output law."""


class AuditFailure(AssertionError):
    """Raised when a declared bound or a proven guarantee does not hold on a run."""


_DETECTORS: Dict[str, type] = {}


def register_detector(cls):
    _DETECTORS[cls.name] = cls
    return cls


class Detector:
    """Deterministic symmetric decision rule on histograms of n messages."""

    name = 'detector'

    def __init__(self, n: int, alphabet_size: int):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        if alphabet_size < 1:
            raise ValueError(f"Alphabet size must be >= 1, got {alphabet_size}")
        self.n = int(n)
        self.alphabet_size = int(alphabet_size)

    def decide_many(self, counts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decide(self, h: Histogram) -> int:
        if h.n != self.n or h.alphabet_size != self.alphabet_size:
            raise DimensionError(
                f"Detector expects n={self.n} over {self.alphabet_size} symbols, "
                f"got n={h.n} over {h.alphabet_size}"
            )
        return int(self.decide_many(np.array([h.counts], dtype=np.int64))[0])

    def __call__(self, h: Histogram) -> int:
        return self.decide(h)

    def decide_sequence(self, messages: Sequence[int]) -> int:
        counts = np.bincount(np.asarray(messages, dtype=np.int64), minlength=self.alphabet_size)
        return self.decide(Histogram(tuple(counts.tolist())))

    def params(self) -> dict:
        return {}

    def to_json(self) -> dict:
        return {'name': self.name, 'n': self.n, 'alphabet_size': self.alphabet_size,
                'params': self.params()}

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, alphabet_size={self.alphabet_size}, {self.params()})"


def detector_from_json(data: dict) -> Detector:
    name = data.get('name')
    if name not in _DETECTORS:
        raise ValueError(f"Unknown detector '{name}'. Known: {sorted(_DETECTORS)}")
    return _DETECTORS[name](data['n'], data['alphabet_size'], **data.get('params', {}))


@register_detector
class ConstantDetector(Detector):
    name = 'constant'

    def __init__(self, n: int, alphabet_size: int, value: int = 0):
        super().__init__(n, alphabet_size)
        if value not in (0, 1):
            raise ValueError(f"Constant detector outputs 0 or 1, got {value}")
        self.value = int(value)

    def decide_many(self, counts):
        return np.full(np.shape(counts)[0], self.value, dtype=np.int64)

    def params(self):
        return {'value': self.value}


@register_detector
class ThresholdDetector(Detector):
    """Outputs 1 iff the count of `symbol` is at least `threshold`."""

    name = 'threshold'

    def __init__(self, n: int, alphabet_size: int, symbol: int = 1, threshold: int = 1):
        super().__init__(n, alphabet_size)
        if not 0 <= symbol < alphabet_size:
            raise ValueError(f"Symbol {symbol} outside alphabet of size {alphabet_size}")
        self.symbol = int(symbol)
        self.threshold = int(threshold)

    def decide_many(self, counts):
        return (np.asarray(counts)[:, self.symbol] >= self.threshold).astype(np.int64)

    def params(self):
        return {'symbol': self.symbol, 'threshold': self.threshold}


@register_detector
class MajorityDetector(Detector):
    """Outputs 1 iff more than half of the messages equal 1. Ties go to 0."""

    name = 'majority'

    def __init__(self, n: int, alphabet_size: int = 2):
        super().__init__(n, alphabet_size)
        if alphabet_size < 2:
            raise ValueError("Majority needs symbol 1 in the alphabet")

    def decide_many(self, counts):
        return (2 * np.asarray(counts)[:, 1] > self.n).astype(np.int64)


@register_detector
class LikelihoodRatioDetector(Detector):
    """Exact i.i.d. likelihood-ratio test between P0 and P1. Ties (and 0/0) go to class 0."""

    name = 'likelihood_ratio'

    def __init__(self, n: int, alphabet_size: int, p0: Sequence[float] = None,
                 p1: Sequence[float] = None, tolerance: float = 1e-9):
        super().__init__(n, alphabet_size)
        self.p0 = FiniteDistribution(p0)
        self.p1 = FiniteDistribution(p1)
        if self.p0.size != alphabet_size or self.p1.size != alphabet_size:
            raise DimensionError(f"Hypothesis laws must have {alphabet_size} symbols")
        self.tolerance = float(tolerance)

    @classmethod
    def between(cls, n: int, P0: FiniteDistribution, P1: FiniteDistribution) -> 'LikelihoodRatioDetector':
        return cls(n, P0.size, P0.tolist(), P1.tolist())

    def decide_many(self, counts):
        counts = np.asarray(counts)
        ll0 = xlogy(counts, self.p0.probs).sum(axis=1)
        ll1 = xlogy(counts, self.p1.probs).sum(axis=1)
        with np.errstate(invalid='ignore'):
            return (ll1 - ll0 > self.tolerance).astype(np.int64)

    def params(self):
        return {'p0': self.p0.tolist(), 'p1': self.p1.tolist(), 'tolerance': self.tolerance}


@register_detector
class NearestClassDetector(Detector):
    """Compares the empirical frequency of symbol 1 with {p, 1-p} and {q, 1-q}.

    Class 1 is chosen only when it is strictly nearer (by more than `tolerance`).
    """

    name = 'nearest_class'

    def __init__(self, n: int, alphabet_size: int = 2, p: float = 0.0, q: float = 0.5,
                 tolerance: float = 1e-12):
        super().__init__(n, alphabet_size)
        if alphabet_size != 2:
            raise ValueError("Nearest-class rule is defined on binary messages")
        self.p = float(p)
        self.q = float(q)
        self.tolerance = float(tolerance)

    def decide_many(self, counts):
        freq = np.asarray(counts)[:, 1] / self.n
        d0 = np.minimum(np.abs(freq - self.p), np.abs(freq - (1.0 - self.p)))
        d1 = np.minimum(np.abs(freq - self.q), np.abs(freq - (1.0 - self.q)))
        return (d0 - d1 > self.tolerance).astype(np.int64)

    def params(self):
        return {'p': self.p, 'q': self.q, 'tolerance': self.tolerance}


def _bits_for(size: int) -> int:
    """ceil(log2 size) for size >= 1."""
    return (int(size) - 1).bit_length()


@dataclass(frozen=True, eq=False)
class KeyedScheme:
    """Uniform key over key_count values; client i sends Y_i ~ channels[k](.|X_i)."""
    n: int
    key_count: int
    channels: Tuple[Channel, ...]
    detector: Detector
    client_channels: Optional[Tuple[Tuple[Channel, ...], ...]] = None

    def __post_init__(self):
        channels = tuple(self.channels)
        object.__setattr__(self, 'channels', channels)
        if self.key_count < 1 or len(channels) != self.key_count:
            raise ValueError(f"Need one channel per key: key_count={self.key_count}, got {len(channels)}")
        shapes = {(ch.input_size, ch.output_size) for ch in channels}
        if len(shapes) != 1:
            raise DimensionError(f"Channels of different keys disagree in shape: {sorted(shapes)}")
        if self.detector.n != self.n:
            raise DimensionError(f"Detector is built for n={self.detector.n}, scheme has n={self.n}")
        if self.detector.alphabet_size != self.output_size:
            raise DimensionError(
                f"Detector reads {self.detector.alphabet_size} symbols, channels emit {self.output_size}"
            )
        if self.client_channels is not None:
            per_key = tuple(tuple(row) for row in self.client_channels)
            object.__setattr__(self, 'client_channels', per_key)
            if len(per_key) != self.key_count or any(len(row) != self.n for row in per_key):
                raise ValueError("client_channels must hold n channels for every key")
            if {(ch.input_size, ch.output_size) for row in per_key for ch in row} != shapes:
                raise DimensionError("Per-client channels must match the scheme's channel shape")

    def channel_of_key(self, k: int) -> Channel:
        return self.channels[k]

    def client_channel(self, k: int, i: int) -> Channel:
        if self.client_channels is None:
            return self.channels[k]
        return self.client_channels[k][i]

    @property
    def heterogeneous(self) -> bool:
        return self.client_channels is not None

    @property
    def input_size(self) -> int:
        return self.channels[0].input_size

    @property
    def output_size(self) -> int:
        return self.channels[0].output_size

    @property
    def comm_bits(self) -> int:
        return self.n * _bits_for(self.output_size)

    @property
    def key_bits(self) -> int:
        return _bits_for(self.key_count)

    def to_json(self) -> dict:
        data = {
            'n': self.n,
            'key_count': self.key_count,
            'channels': [ch.to_json() for ch in self.channels],
            'detector': self.detector.to_json(),
            'comm_bits': self.comm_bits,
            'key_bits': self.key_bits,
        }
        if self.client_channels is not None:
            data['client_channels'] = [[ch.to_json() for ch in row] for row in self.client_channels]
        return data

    @classmethod
    def from_json(cls, data: dict) -> 'KeyedScheme':
        try:
            client_channels = data.get('client_channels')
            if client_channels is not None:
                client_channels = tuple(tuple(Channel.from_json(ch) for ch in row) for row in client_channels)
            return cls(
                n=int(data['n']),
                key_count=int(data['key_count']),
                channels=tuple(Channel.from_json(ch) for ch in data['channels']),
                detector=detector_from_json(data['detector']),
                client_channels=client_channels,
            )
        except (KeyError, TypeError, AttributeError) as e:
            raise ValueError(f"Malformed scheme JSON: {e!r}") from e


@dataclass(frozen=True)
class EvaluationReport:
    epsilon: float
    delta: float
    comm_bits: int
    key_bits: int
    method: str
    trials: Optional[int] = None
    seed: Optional[int] = None
    epsilon_stderr: Optional[float] = None
    delta_stderr: Optional[float] = None
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.method not in ('exact', 'monte_carlo'):
            raise ValueError(f"Unknown evaluation method '{self.method}'")
        for name in ('epsilon', 'delta'):
            value = getattr(self, name)
            if not -PROB_TOL <= value <= 1.0 + PROB_TOL:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, min(1.0, max(0.0, float(value))))
        object.__setattr__(self, 'warnings', tuple(self.warnings))

    def to_row(self) -> dict:
        return {
            'epsilon': self.epsilon,
            'delta': self.delta,
            'comm_bits': self.comm_bits,
            'key_bits': self.key_bits,
            'method': self.method,
            'trials': self.trials,
            'seed': self.seed,
        }

    def to_dict(self) -> dict:
        data = self.to_row()
        data.update({
            'epsilon_stderr': self.epsilon_stderr,
            'delta_stderr': self.delta_stderr,
            'warnings': list(self.warnings),
        })
        return data


def _require_classes(H0, H1):
    if not H0 or not H1:
        raise ValueError("Both hypothesis classes need at least one distribution")


def message_law(scheme: KeyedScheme, mu: FiniteDistribution) -> ExchangeableLaw:
    """Law of (Y_1..Y_n) under X_i ~ mu i.i.d.: the uniform key mixture of i.i.d. pushforwards."""
    if scheme.heterogeneous:
        raise ValueError("Exact message laws need identical client channels; use monte_carlo_evaluate")
    if mu.size != scheme.input_size:
        raise DimensionError(f"Scheme takes {scheme.input_size} input symbols, distribution has {mu.size}")
    weight = 1.0 / scheme.key_count
    return mix_laws([(weight, iid_law(push_forward(ch, mu), scheme.n)) for ch in scheme.channels])


def correctness_error(scheme: KeyedScheme, H0: Sequence[FiniteDistribution],
                      H1: Sequence[FiniteDistribution]) -> float:
    """Worst-case probability that the detector misnames the class, over both classes."""
    _require_classes(H0, H1)
    worst = 0.0
    for label, cls in ((0, H0), (1, H1)):
        for mu in cls:
            p_one = symmetric_event_prob(message_law(scheme, mu), scheme.detector)
            worst = max(worst, p_one if label == 0 else 1.0 - p_one)
    return min(1.0, max(0.0, worst))


def privacy_delta(scheme: KeyedScheme, H: Sequence[FiniteDistribution]) -> float:
    """Largest total variation between message laws of two members of H."""
    if not H:
        raise ValueError("Class must contain at least one distribution")
    laws = [message_law(scheme, mu) for mu in H]
    delta = 0.0
    for L1, L2 in itertools.combinations(laws, 2):
        delta = max(delta, law_tv(L1, L2))
    return delta


def evaluate(scheme: KeyedScheme, H0: Sequence[FiniteDistribution],
             H1: Sequence[FiniteDistribution]) -> EvaluationReport:
    epsilon = correctness_error(scheme, H0, H1)
    delta = max(privacy_delta(scheme, H0), privacy_delta(scheme, H1))
    return EvaluationReport(
        epsilon=epsilon,
        delta=delta,
        comm_bits=scheme.comm_bits,
        key_bits=scheme.key_bits,
        method='exact',
    )


def _push_table(scheme: KeyedScheme, mu: FiniteDistribution) -> np.ndarray:
    """Message marginals: shape (key_count, m) for identical clients, (key_count, n, m) otherwise."""
    if scheme.heterogeneous:
        return np.array([[push_forward(ch, mu).probs for ch in row] for row in scheme.client_channels])
    return np.array([push_forward(ch, mu).probs for ch in scheme.channels])


def _sample_histograms(scheme: KeyedScheme, pushes: np.ndarray, rng: np.random.Generator,
                       size: int) -> np.ndarray:
    m = scheme.output_size
    keys = rng.integers(scheme.key_count, size=size)
    counts = np.zeros((size, m), dtype=np.int64)
    if not scheme.heterogeneous:
        for k in range(scheme.key_count):
            rows = np.flatnonzero(keys == k)
            if rows.size:
                counts[rows] = rng.multinomial(scheme.n, pushes[k], size=rows.size)
        return counts
    # clients are drawn one after another so that trailing clients do not shift earlier draws
    trial_index = np.arange(size)
    for i in range(scheme.n):
        cdf = np.cumsum(pushes[keys, i, :], axis=1)
        u = rng.random(size)
        symbols = np.minimum((cdf <= u[:, None]).sum(axis=1), m - 1)
        counts[trial_index, symbols] += 1
    return counts


def _empirical_tv(a: Counter, b: Counter, trials: int) -> float:
    support = sorted(set(a) | set(b))
    return 0.5 * sum(abs(a.get(h, 0) - b.get(h, 0)) for h in support) / trials


def monte_carlo_evaluate(scheme: KeyedScheme, H0: Sequence[FiniteDistribution],
                         H1: Sequence[FiniteDistribution], trials: int, seed: int,
                         threads: int = 1) -> EvaluationReport:
    """Estimate epsilon and delta from simulated message histograms.

    Block b of distribution d draws from counter_rng(seed, b, d). epsilon is the worst
    empirical error rate with its binomial standard error; delta is the plug-in TV between
    empirical histogram laws, which is biased upward.
    """
    _require_classes(H0, H1)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    members = [(0, mu) for mu in H0] + [(1, mu) for mu in H1]
    for _, mu in members:
        if mu.size != scheme.input_size:
            raise DimensionError(f"Scheme takes {scheme.input_size} input symbols, distribution has {mu.size}")

    warnings = []
    errors = []
    histograms = []
    for d, (label, mu) in enumerate(members):
        pushes = _push_table(scheme, mu)

        def run_block(block, size, d=d, pushes=pushes):
            counts = _sample_histograms(scheme, pushes, counter_rng(seed, block, d), size)
            ones = int(scheme.detector.decide_many(counts).sum())
            return ones, Counter(tuple(row) for row in counts.tolist())

        results = map_blocks(run_block, trials, threads)
        ones = sum(r[0] for r in results)
        hist = Counter()
        for _, block_hist in results:
            hist.update(block_hist)
        rate = ones / trials if label == 0 else (trials - ones) / trials
        errors.append(rate)
        histograms.append((label, hist))

    worst = int(np.argmax(errors))
    epsilon = errors[worst]
    stderr = math.sqrt(epsilon * (1.0 - epsilon) / trials)

    delta = 0.0
    for label in (0, 1):
        cls = [h for lab, h in histograms if lab == label]
        for a, b in itertools.combinations(cls, 2):
            delta = max(delta, _empirical_tv(a, b, trials))
    if any(len([1 for lab, _ in histograms if lab == label]) > 1 for label in (0, 1)):
        warnings.append("delta is a plug-in TV between empirical histogram laws and is biased upward")
    if trials == 1:
        warnings.append("trials=1: degenerate estimate, standard errors are meaningless")
        logger.warning("monte_carlo_evaluate called with trials=1")

    return EvaluationReport(
        epsilon=epsilon,
        delta=delta,
        comm_bits=scheme.comm_bits,
        key_bits=scheme.key_bits,
        method='monte_carlo',
        trials=trials,
        seed=seed,
        epsilon_stderr=stderr,
        warnings=tuple(warnings),
    )


def _common_pushforward(W: Channel, cls: Sequence[FiniteDistribution], label: int) -> FiniteDistribution:
    pushes = [push_forward(W, mu) for mu in cls]
    for i, P in enumerate(pushes[1:], start=1):
        gap = float(np.max(np.abs(P.probs - pushes[0].probs)))
        if gap > SEPARATION_TOL:
            raise NotSeparatingChannelError(
                f"Channel maps members 0 and {i} of H{label} to different laws (gap {gap:.3g})"
            )
    return pushes[0]


def build_prop1_scheme(W: Channel, H0: Sequence[FiniteDistribution],
                       H1: Sequence[FiniteDistribution], n: int) -> KeyedScheme:
    """Keyless scheme: every client applies W, the server runs the likelihood-ratio test."""
    _require_classes(H0, H1)
    P0 = _common_pushforward(W, H0, 0)
    P1 = _common_pushforward(W, H1, 1)
    if float(np.max(np.abs(P0.probs - P1.probs))) <= SEPARATION_TOL:
        raise NotSeparatingChannelError("Channel maps both classes to the same law")
    detector = LikelihoodRatioDetector.between(n, P0, P1)
    return KeyedScheme(n=n, key_count=1, channels=(W,), detector=detector)


def build_onebit_scheme(mu0: FiniteDistribution, mu1: FiniteDistribution,
                        mu2: FiniteDistribution, n: int) -> KeyedScheme:
    """Scheme for {mu0, mu1} vs {mu2} with at most one key bit.

    Non-collinear triples get the keyless separating-channel scheme. Collinear triples are
    reduced to bits, symmetrized to {Ber(p), Ber(1-p)} vs a third law, and the key bit
    decides whether clients flip their bit.
    """
    mus = (mu0, mu1, mu2)
    for i, j in itertools.combinations(range(3), 2):
        if mus[i].size != mus[j].size:
            raise DimensionError(f"Alphabet mismatch: {mus[i].size} vs {mus[j].size}")
        if mus[i].isclose(mus[j]):
            raise ValueError(f"Distributions {i} and {j} coincide; the triple must be pairwise distinct")

    if collinearity_check(mu0, mu1, mu2) is None:
        logger.debug("triple is not collinear; using the keyless separating channel")
        W = separating_channel(mu0, mu1, mu2)
        return build_prop1_scheme(W, [mu0, mu1], [mu2], n)

    to_bit = sign_channel(mu0, mu1)
    p0, p1, p2 = (push_forward(to_bit, mu)[1] for mu in mus)
    symmetrizer, p, q = bernoulli_symmetrizer(p0, p1, p2)
    base = compose(symmetrizer, to_bit)
    flipped = compose(Channel.flip(), base)
    detector = NearestClassDetector(n, 2, p=p, q=q)
    return KeyedScheme(n=n, key_count=2, channels=(base, flipped), detector=detector)


def _resample(resample_marginal: FiniteDistribution, theta: float, messages: np.ndarray,
              seed: int) -> np.ndarray:
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    rng = counter_rng(seed, _RESAMPLE_STREAM)
    keep = rng.random(messages.shape) < theta
    u = rng.random(messages.shape)
    cdf = np.cumsum(resample_marginal.probs)
    fresh = np.minimum(np.searchsorted(cdf, u, side='right'), resample_marginal.size - 1)
    return np.where(keep, messages, fresh)


def resample_messages(resample_marginal: FiniteDistribution, theta: float,
                      messages, seed: int) -> np.ndarray:
    """Z_i = Y_i with probability theta, else a fresh draw from resample_marginal.

    `messages` is one sequence (shape (n,)) or a batch (shape (trials, n)).
    """
    return _resample(resample_marginal, theta, np.asarray(messages, dtype=np.int64), seed)


def det_prime_many(detector: Detector, resample_marginal: FiniteDistribution, theta: float,
                   messages, seed: int) -> np.ndarray:
    """det' on a batch of message sequences of shape (trials, n)."""
    batch = np.atleast_2d(np.asarray(messages, dtype=np.int64))
    if batch.shape[1] != detector.n:
        raise DimensionError(f"Detector expects {detector.n} messages, got {batch.shape[1]}")
    if resample_marginal.size != detector.alphabet_size:
        raise DimensionError(
            f"Resampling law has {resample_marginal.size} symbols, detector reads {detector.alphabet_size}"
        )
    z = _resample(resample_marginal, theta, batch, seed)
    counts = (z[:, :, None] == np.arange(detector.alphabet_size)).sum(axis=1)
    return detector.decide_many(counts)


def det_prime(detector: Detector, resample_marginal: FiniteDistribution, theta: float,
              messages: Sequence[int], seed: int) -> int:
    """Randomized detector: resample each message with probability 1 - theta, then apply detector."""
    messages = np.asarray(messages, dtype=np.int64)
    if messages.ndim != 1:
        raise DimensionError("det_prime takes one message sequence; use det_prime_many for batches")
    return int(det_prime_many(detector, resample_marginal, theta, messages[None, :], seed)[0])
