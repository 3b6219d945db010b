"""Numerical certification of the keyless impossibility machinery.

Keyless binary-input schemes are studied through the inputs Ber(0), Ber(theta), Ber(1). For a
binary-output channel with q0 = W(1|0) > q1 = W(1|1) write a = q1, c = q0 - q1 and
c' = (1 - theta) c. The quantity of interest is the Hellinger ratio

    f(a, c) = H^2(Ber(a + c'), Ber(a)) / H^2(Ber(a + c), Ber(a + c'))

whose supremum bounds how much privacy a keyless scheme can buy per unit of correctness.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from channels import (
    Channel,
    DegenerateClassError,
    ExcludedChannelError,
    gamma_star,
    gamma_transform,
    likelihood_ratios,
    merge_symbols,
    push_forward,
    sort_by_likelihood_ratio,
)
from prob_core import (
    PROB_TOL,
    ExchangeableLaw,
    FiniteDistribution,
    hellinger_sq,
    iid_law,
    law_tv,
    tv_distance,
)
from sdht_engine import AuditFailure

logger = logging.getLogger(__name__)

# Slack for grid certifications and monotonicity checks
CERT_TOL = 1e-9

# Log-refined corner near (a, c) = (0, 0), where the supremum is approached
CORNER_RANGE = (-8.0, -2.0)


def _check_theta(theta: float, allow_one: bool = False):
    upper_ok = theta <= 1.0 if allow_one else theta < 1.0
    if not (0.0 < theta and upper_ok):
        raise DegenerateClassError(f"theta must lie in (0, 1{']' if allow_one else ')'}, got {theta}")


@dataclass(frozen=True)
class RatioInstance:
    theta: float
    a: float
    c: float

    def __post_init__(self):
        _check_theta(self.theta, allow_one=True)
        if self.a < 0 or self.c <= 0 or self.a + self.c > 1.0 + 1e-15:
            raise ValueError(f"Need 0 <= a, 0 < c and a + c <= 1, got a={self.a}, c={self.c}")

    @property
    def c_prime(self) -> float:
        return (1.0 - self.theta) * self.c

    @property
    def k(self) -> float:
        return math.inf if self.theta == 1.0 else 1.0 / (1.0 - self.theta)

    def to_dict(self) -> dict:
        return {'theta': self.theta, 'a': self.a, 'c': self.c, 'c_prime': self.c_prime}


def half_hellinger_bernoulli(x, y):
    """1 - sqrt(xy) - sqrt((1-x)(1-y)), written without cancellation. Vectorized."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff_sq = (x - y) ** 2
    first = np.sqrt(x) + np.sqrt(y)
    second = np.sqrt(np.clip(1.0 - x, 0.0, None)) + np.sqrt(np.clip(1.0 - y, 0.0, None))
    with np.errstate(divide='ignore', invalid='ignore'):
        t1 = np.where(first > 0, diff_sq / np.where(first > 0, first, 1.0) ** 2, 0.0)
        t2 = np.where(second > 0, diff_sq / np.where(second > 0, second, 1.0) ** 2, 0.0)
    return 0.5 * (t1 + t2)


def _ratio_grid(theta: float, a, c) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    c_prime = (1.0 - theta) * c
    numerator = half_hellinger_bernoulli(a, a + c_prime)
    denominator = half_hellinger_bernoulli(a + c_prime, np.minimum(a + c, 1.0))
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(denominator > 0, numerator / np.where(denominator > 0, denominator, 1.0), 0.0)


def hellinger_ratio_f(inst: RatioInstance) -> float:
    """f(a, c) = N / D; defined as 0 when c' = 0 (theta = 1)."""
    if inst.c_prime == 0.0:
        logger.warning("hellinger ratio with c'=0 (theta=1): numerator vanishes, ratio set to 0")
        return 0.0
    return float(_ratio_grid(inst.theta, inst.a, inst.c))


def hellinger_ratio_f_raw(inst: RatioInstance) -> float:
    """The displayed form 1 - sqrt(a(a+c')) - ... over 1 - sqrt((a+c')(a+c)) - ...; for cross-checks."""
    a, c, cp = inst.a, inst.c, inst.c_prime
    numerator = 1.0 - math.sqrt(a * (a + cp)) - math.sqrt((1 - a) * (1 - a - cp))
    denominator = 1.0 - math.sqrt((a + cp) * (a + c)) - math.sqrt(max(0.0, (1 - a - cp) * (1 - a - c)))
    return numerator / denominator


def ratio_limit(theta: float) -> float:
    """Limit of f(0, c) as c -> 0: 1 / (sqrt(k) - 1)^2 with k = 1 / (1 - theta)."""
    _check_theta(theta)
    k = 1.0 / (1.0 - theta)
    # sqrt(k) - 1 = (k - 1) / (sqrt(k) + 1) and k - 1 = theta / (1 - theta)
    gap = (theta / (1.0 - theta)) / (math.sqrt(k) + 1.0)
    return 1.0 / (gap * gap)


def boundary_bound(theta: float) -> float:
    return 1.0 + 2.0 * (1.0 - math.sqrt(theta)) / theta


def boundary_ratio(theta: float, c: float) -> float:
    """f(1 - c, c), the a + c = 1 edge where the Ber(0) output is a point mass.

    Equals sqrt(1-c) + (1 - sqrt(1-c) - c sqrt(theta)) / (1 - sqrt(1 - theta c)) and tends to
    (1 - sqrt(theta))^2 / theta as c -> 0.
    """
    _check_theta(theta, allow_one=True)
    if not 0.0 < c <= 1.0:
        raise ValueError(f"c must lie in (0, 1], got {c}")
    if theta == 1.0:
        return 0.0
    numerator = float(half_hellinger_bernoulli(1.0 - c, 1.0 - theta * c))
    denominator = float(half_hellinger_bernoulli(1.0 - theta * c, 1.0))
    value = numerator / denominator
    bound = boundary_bound(theta)
    if value > bound + CERT_TOL:
        raise AuditFailure(f"boundary ratio {value} exceeds 1 + 2(1 - sqrt(theta))/theta = {bound}")
    return value


def boundary_limit(theta: float) -> float:
    _check_theta(theta)
    return (1.0 - math.sqrt(theta)) ** 2 / theta


def f0c_closed_form(c: float, theta: float) -> float:
    """(sqrt(k) - c + sqrt((1-c)(k-c))) / ((sqrt(k) + sqrt(k-c)) (sqrt(k) - 1)^2)."""
    _check_theta(theta)
    if not 0.0 < c < 1.0:
        raise ValueError(f"c must lie in (0, 1), got {c}")
    k = 1.0 / (1.0 - theta)
    root_k = math.sqrt(k)
    gap = (theta / (1.0 - theta)) / (root_k + 1.0)
    numerator = root_k - c + math.sqrt((1.0 - c) * (k - c))
    return numerator / ((root_k + math.sqrt(k - c)) * gap * gap)


def f0c_monotone_direction(theta: float, grid: Sequence[float]) -> str:
    """Observed direction of f(0, c) along an increasing grid of c values."""
    values = np.array([f0c_closed_form(c, theta) for c in sorted(grid)])
    diffs = np.diff(values)
    if np.all(diffs <= CERT_TOL):
        return 'non-increasing'
    if np.all(diffs >= -CERT_TOL):
        return 'non-decreasing'
    return 'mixed'


@dataclass(frozen=True)
class RatioIdentityCheck:
    lhs: float
    rhs: float
    gap: float
    indeterminate: bool = False


def lemma1_identity_check(p: float, q: float) -> RatioIdentityCheck:
    """Raw quotient form of h_q(p) against its factorization (A - B)(1 + A + B) / (2AB).

    A = sqrt(pq), B = sqrt((1-p)(1-q)). The raw form is 0/0 at p = q.
    """
    if not (0.0 < p < 1.0 and 0.0 < q < 1.0):
        raise ValueError(f"p and q must lie in (0, 1), got p={p}, q={q}")
    A = math.sqrt(p * q)
    B = math.sqrt((1.0 - p) * (1.0 - q))
    rhs = (A - B) * (1.0 + A + B) / (2.0 * A * B)
    denominator = float(half_hellinger_bernoulli(p, q))
    if denominator == 0.0:
        logger.warning("Ratio identity raw form is indeterminate at p=q=%s", p)
        return RatioIdentityCheck(lhs=math.nan, rhs=rhs, gap=math.nan, indeterminate=True)
    lhs = (-(p + q) / (2.0 * A) + (2.0 - p - q) / (2.0 * B)) / denominator
    return RatioIdentityCheck(lhs=lhs, rhs=rhs, gap=abs(lhs - rhs))


def K_of_t(t: float, theta: float) -> float:
    """((1-theta)(sqrt t + w) / (theta (1 + w)))^2 with w = sqrt(theta + (1-theta) t).

    Continuous at t = 1, where it equals ((1-theta)/theta)^2.
    """
    _check_theta(theta)
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    w = math.sqrt(theta + (1.0 - theta) * t)
    value = (1.0 - theta) * (math.sqrt(t) + w) / (theta * (1.0 + w))
    return value * value


def K_of_t_raw(t: float, theta: float) -> float:
    """(1 - w)^2 / (sqrt t - w)^2; undefined at t = 1."""
    w = math.sqrt(theta + (1.0 - theta) * t)
    return (1.0 - w) ** 2 / (math.sqrt(t) - w) ** 2


@dataclass(frozen=True)
class SupRatioResult:
    theta: float
    max_value: float
    argmax: RatioInstance
    bound: float
    grid_points: int
    max_violation: float

    @property
    def passed(self) -> bool:
        return self.max_value <= self.bound + CERT_TOL and self.max_violation <= CERT_TOL

    def to_dict(self) -> dict:
        return {
            'theta': self.theta,
            'max_value': self.max_value,
            'argmax': self.argmax.to_dict(),
            'bound': self.bound,
            'grid_points': self.grid_points,
            'max_violation': self.max_violation,
            'passed': self.passed,
        }


def _grid_scan(theta: float, a_values: np.ndarray, c_values: np.ndarray):
    """Ratios on the admissible part of a x c (a + c <= 1) and the largest f(a,c) - f(0,c)."""
    a = a_values[:, None]
    c = c_values[None, :]
    admissible = a + c <= 1.0 + 1e-15
    ratios = np.where(admissible, _ratio_grid(theta, a, c), -np.inf)
    at_zero = _ratio_grid(theta, 0.0, c_values)
    violation = float(np.max(np.where(admissible, ratios - at_zero[None, :], -np.inf)))
    return ratios, violation, int(admissible.sum())


def sup_ratio_binary(theta: float, grid_resolution: int) -> SupRatioResult:
    """Grid maximum of f over admissible (a, c), with a log-refined corner near (0, 0)."""
    _check_theta(theta)
    if grid_resolution < 100:
        raise ValueError(f"grid_resolution must be >= 100, got {grid_resolution}")
    steps = np.arange(grid_resolution + 1)
    a_uniform = steps / grid_resolution
    c_uniform = steps[1:] / grid_resolution
    corner = np.logspace(CORNER_RANGE[0], CORNER_RANGE[1], max(50, grid_resolution // 4))
    a_corner = np.concatenate([[0.0], corner])

    best_value, best_instance = -np.inf, None
    worst_violation, points = -np.inf, 0
    for a_values, c_values in ((a_uniform, c_uniform), (a_corner, corner)):
        ratios, violation, count = _grid_scan(theta, a_values, c_values)
        points += count
        worst_violation = max(worst_violation, violation)
        i, j = np.unravel_index(int(np.argmax(ratios)), ratios.shape)
        if ratios[i, j] > best_value:
            best_value = float(ratios[i, j])
            best_instance = RatioInstance(theta, float(a_values[i]), float(c_values[j]))

    bound = ratio_limit(theta)
    logger.debug("sup ratio grid for theta=%s: %d points, max %.12g (bound %.12g)", theta, points, best_value, bound)
    return SupRatioResult(theta, best_value, best_instance, bound, points, worst_violation)


@lru_cache(maxsize=64)
def lambda_inf(theta: float, grid_resolution: int = 1000) -> float:
    """Grid infimum of H^2(P0, P1) / H^2(P1, P2): the reciprocal of sup_ratio_binary."""
    result = sup_ratio_binary(theta, grid_resolution)
    if result.max_value <= 0:
        raise AuditFailure(f"Grid supremum {result.max_value} is not positive")
    return 1.0 / result.max_value


def _require_binary_input(W: Channel):
    if W.input_size != 2:
        raise ValueError(f"Expected a binary-input channel, got {W.input_size} inputs")
    if float(np.max(np.abs(W.rows[0] - W.rows[1]))) <= PROB_TOL:
        raise ExcludedChannelError("Channel rows coincide; W(.|0) must differ from W(.|1)")


def _input_laws(theta: float):
    return FiniteDistribution.bernoulli(0.0), FiniteDistribution.bernoulli(theta), FiniteDistribution.bernoulli(1.0)


def general_channel_ratio(W: Channel, theta: float) -> float:
    """H^2(W o Ber(theta), W o Ber(1)) / H^2(W o Ber(0), W o Ber(theta))."""
    _require_binary_input(W)
    _check_theta(theta)
    P0, P1, P2 = (push_forward(W, mu) for mu in _input_laws(theta))
    return hellinger_sq(P1, P2) / hellinger_sq(P0, P1)


def ratio_instance_of(W: Channel, theta: float) -> RatioInstance:
    """RatioInstance of a binary-output channel, relabeling outputs so that W(1|0) > W(1|1)."""
    _require_binary_input(W)
    if W.output_size != 2:
        raise ValueError(f"Expected a binary-output channel, got {W.output_size} outputs")
    q0, q1 = W.rows[0, 1], W.rows[1, 1]
    if q0 < q1:
        q0, q1 = 1.0 - q0, 1.0 - q1
    return RatioInstance(theta, float(q1), float(q0 - q1))


@dataclass(frozen=True)
class ReductionStep:
    kind: str
    phase: int
    gamma: float
    ratio: float

    def to_dict(self) -> dict:
        return {'kind': self.kind, 'phase': self.phase, 'gamma': self.gamma, 'ratio': self.ratio}


@dataclass(frozen=True)
class BinaryReduction:
    channel: Channel
    trace: Tuple[float, ...]
    steps: Tuple[ReductionStep, ...] = field(default_factory=tuple)
    direction: str = 'constant'

    @property
    def initial(self) -> float:
        return self.trace[0]

    @property
    def final(self) -> float:
        return self.trace[-1]


def _trace_direction(trace: Sequence[float]) -> str:
    diffs = np.diff(np.asarray(trace))
    slack = CERT_TOL * max(1.0, float(np.max(np.abs(trace))))
    rising = bool(np.all(diffs >= -slack))
    falling = bool(np.all(diffs <= slack))
    if rising and falling:
        return 'constant'
    if rising:
        return 'non-decreasing'
    if falling:
        return 'non-increasing'
    return 'mixed'


def reduce_to_binary(W: Channel, theta: float) -> BinaryReduction:
    """Reduce a binary-input channel to a binary-output one without lowering the ratio.

    Symbols are sorted by W(y|0)/W(y|1); the two smallest ratios (both <= 1) are equalized by
    gamma_transform at gamma_star and merged. Once fewer than two symbols have ratio <= 1 the
    inputs are relabeled (phase 2) and merging continues. Ratios in the trace always use the
    original input labels.
    """
    _require_binary_input(W)
    _check_theta(theta)
    nonzero = np.flatnonzero(W.rows.sum(axis=0) > 0)
    current = Channel(W.rows[:, nonzero])
    swapped = False
    trace = [general_channel_ratio(current, theta)]
    steps = []

    while current.output_size > 2:
        if np.count_nonzero(likelihood_ratios(current) <= 1.0) < 2:
            if swapped:
                raise ExcludedChannelError("Reduction stalled after relabeling inputs")
            current = Channel(current.rows[::-1])
            swapped = True
            continue
        current, _ = sort_by_likelihood_ratio(current)
        a0, a1 = current.rows[:, 0]
        b0, b1 = current.rows[:, 1]
        if b0 >= b1:
            # second ratio is exactly 1: gamma_star would collapse the channel
            logger.warning("ratio-1 symbol met during reduction; merging without transform")
            gamma = 0.0
        else:
            gamma = gamma_star(a0, a1, b0, b1)
        if gamma > 0.0:
            current = gamma_transform(current, gamma)
        current = merge_symbols(current, 0, 1)
        oriented = Channel(current.rows[::-1]) if swapped else current
        ratio = general_channel_ratio(oriented, theta)
        trace.append(ratio)
        steps.append(ReductionStep('gamma+merge' if gamma > 0.0 else 'merge', 2 if swapped else 1, gamma, ratio))

    final = Channel(current.rows[::-1]) if swapped else current
    direction = _trace_direction(trace)
    if direction == 'mixed':
        logger.warning("reduction trace changes direction: %s", trace)
    return BinaryReduction(final, tuple(trace), tuple(steps), direction)


def scheme_laws(W: Channel, theta: float, n: int) -> Tuple[ExchangeableLaw, ExchangeableLaw, ExchangeableLaw]:
    """Message laws of the keyless scheme W under inputs Ber(0), Ber(theta), Ber(1)."""
    _require_binary_input(W)
    _check_theta(theta)
    return tuple(iid_law(push_forward(W, mu), n) for mu in _input_laws(theta))


def tradeoff_bound(lam: float) -> float:
    """1 - exp((sqrt(3)/2 - 1) * lambda)."""
    return -math.expm1((math.sqrt(3.0) / 2.0 - 1.0) * lam)


@dataclass(frozen=True)
class TradeoffAudit:
    theta: float
    n: int
    tv01: float
    tv12: float
    lam: float
    bound: float
    disjunct: Optional[str]

    @property
    def passed(self) -> bool:
        return self.disjunct is not None

    def to_dict(self) -> dict:
        return {'theta': self.theta, 'n': self.n, 'tv01': self.tv01, 'tv12': self.tv12, 'lambda': self.lam,
                'bound': self.bound, 'disjunct': self.disjunct, 'passed': self.passed}


def tradeoff_audit(L0: ExchangeableLaw, L1: ExchangeableLaw, L2: ExchangeableLaw, theta: float,
                   lam: Optional[float] = None, strict: bool = True) -> TradeoffAudit:
    """Check that tv(L1, L2) <= 1/2 or tv(L0, L1) >= 1 - exp((sqrt(3)/2 - 1) lambda)."""
    if not (L0.n == L1.n == L2.n):
        raise ValueError(f"Laws must share n, got {L0.n}, {L1.n}, {L2.n}")
    _check_theta(theta)
    lam = lambda_inf(theta) if lam is None else float(lam)
    bound = tradeoff_bound(lam)
    tv01 = law_tv(L0, L1)
    tv12 = law_tv(L1, L2)
    if tv12 <= 0.5:
        disjunct = 'tv12<=1/2'
    elif tv01 >= bound - CERT_TOL:
        disjunct = 'tv01>=bound'
    else:
        disjunct = None
    audit = TradeoffAudit(theta, L0.n, tv01, tv12, lam, bound, disjunct)
    if strict and not audit.passed:
        raise AuditFailure(f"Trade-off violated: tv12={tv12:.6g} > 1/2 and tv01={tv01:.6g} < {bound:.6g}")
    return audit


@dataclass(frozen=True)
class HellingerTvBounds:
    hellinger_sq: float
    tv: float
    lower: float
    upper: float

    @property
    def holds(self) -> bool:
        return self.lower - PROB_TOL <= self.tv <= self.upper + PROB_TOL


def pinsker_hellinger_check(P: FiniteDistribution, Q: FiniteDistribution) -> HellingerTvBounds:
    """H^2/2 <= tv <= sqrt(H^2 (1 - H^2/4))."""
    h2 = hellinger_sq(P, Q)
    return HellingerTvBounds(h2, tv_distance(P, Q), h2 / 2.0, math.sqrt(max(0.0, h2 * (1.0 - h2 / 4.0))))
