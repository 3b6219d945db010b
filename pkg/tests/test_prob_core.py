import itertools
import math

import numpy as np
import pytest

import prob_core
from prob_core import (
    DimensionError,
    EnumerationBudgetError,
    ExchangeableLaw,
    FiniteDistribution,
    Histogram,
    best_deterministic_test,
    deterministic_test_score,
    hellinger_sq,
    histogram_count,
    histogram_prob,
    iid_law,
    iter_histograms,
    law_hellinger_sq,
    law_tv,
    mix_laws,
    symmetric_event_prob,
    tv_distance,
)


def random_distribution(rng, m):
    return FiniteDistribution(rng.dirichlet(np.ones(m)))


def sequence_probs(law, sequences):
    probs = []
    for seq in sequences:
        probs.append(sum(w * float(np.prod(marg.probs[list(seq)])) for w, marg in law.components))
    return np.array(probs)


def test_distribution_validation():
    with pytest.raises(ValueError):
        FiniteDistribution([0.5, 0.6])
    with pytest.raises(ValueError):
        FiniteDistribution([-0.1, 1.1])
    with pytest.raises(ValueError):
        FiniteDistribution([])
    assert FiniteDistribution.bernoulli(0.3).tolist() == pytest.approx([0.7, 0.3])
    assert FiniteDistribution.point_mass(3, 2).tolist() == [0.0, 0.0, 1.0]


def test_tv_and_hellinger_basics(ber):
    assert tv_distance(ber(0.2), ber(0.2)) == 0.0
    assert tv_distance(ber(0.0), ber(1.0)) == pytest.approx(1.0)
    assert hellinger_sq(ber(0.0), ber(1.0)) == pytest.approx(2.0)
    assert hellinger_sq(ber(0.25), ber(0.25)) == 0.0
    with pytest.raises(DimensionError):
        tv_distance(ber(0.5), FiniteDistribution.uniform(3))


def test_best_deterministic_test_scores_one_plus_tv(rng):
    for _ in range(10000):
        m = int(rng.integers(2, 6))
        P, Q = random_distribution(rng, m), random_distribution(rng, m)
        accept, score = best_deterministic_test(P, Q)
        assert score == pytest.approx(1.0 + tv_distance(P, Q), abs=1e-12)
        assert deterministic_test_score(P, Q, accept) == pytest.approx(score, abs=1e-12)


def test_no_deterministic_test_beats_the_best(rng):
    P, Q = random_distribution(rng, 4), random_distribution(rng, 4)
    _, best = best_deterministic_test(P, Q)
    for r in range(5):
        for subset in itertools.combinations(range(4), r):
            assert deterministic_test_score(P, Q, subset) <= best + 1e-12


def test_histogram_enumeration_counts():
    assert histogram_count(5, 3) == math.comb(7, 2)
    histograms = list(iter_histograms(5, 3))
    assert len(histograms) == 21
    assert len(set(h.counts for h in histograms)) == 21
    assert all(h.n == 5 for h in histograms)
    assert list(iter_histograms(4, 1)) == [Histogram((4,))]


def test_histogram_probs_sum_to_one(rng):
    law = iid_law(random_distribution(rng, 3), 6)
    total = sum(histogram_prob(law, h) for h in iter_histograms(6, 3))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_binomial_histogram_prob(ber):
    law = iid_law(ber(0.3), 4)
    assert histogram_prob(law, Histogram((2, 2))) == pytest.approx(6 * 0.09 * 0.49)


@pytest.mark.parametrize('m,max_n', [(2, 10), (3, 6)])
def test_law_tv_matches_sequence_enumeration(rng, m, max_n):
    for n in range(1, max_n + 1):
        L1 = iid_law(random_distribution(rng, m), n)
        L2 = mix_laws([(0.5, iid_law(random_distribution(rng, m), n)),
                       (0.5, iid_law(random_distribution(rng, m), n))])
        sequences = list(itertools.product(range(m), repeat=n))
        p, q = sequence_probs(L1, sequences), sequence_probs(L2, sequences)
        assert law_tv(L1, L2) == pytest.approx(0.5 * np.abs(p - q).sum(), abs=1e-12)


@pytest.mark.parametrize('m,max_n', [(2, 10), (3, 6)])
def test_symmetric_event_prob_matches_sequence_enumeration(rng, m, max_n):
    def predicate(h):
        return h.counts[0] >= h.counts[-1]

    for n in range(1, max_n + 1):
        law = iid_law(random_distribution(rng, m), n)
        sequences = list(itertools.product(range(m), repeat=n))
        probs = sequence_probs(law, sequences)
        brute = sum(p for seq, p in zip(sequences, probs)
                    if predicate(Histogram(tuple(np.bincount(seq, minlength=m)))))
        assert symmetric_event_prob(law, predicate) == pytest.approx(brute, abs=1e-12)


@pytest.mark.parametrize('trial', range(30))
def test_hellinger_tensorizes(trial):
    rng = np.random.default_rng(1000 + trial)
    m = int(rng.integers(2, 4))
    n = int(rng.integers(1, 13))
    P, Q = random_distribution(rng, m), random_distribution(rng, m)
    one = 1.0 - hellinger_sq(P, Q) / 2.0
    affinity = 1.0 - law_hellinger_sq(iid_law(P, n), iid_law(Q, n)) / 2.0
    assert affinity == pytest.approx(one ** n, abs=1e-10)


def test_hellinger_tensorizes_on_bernoulli_pair(ber):
    P, Q = ber(0.2), ber(0.6)
    one = 1.0 - hellinger_sq(P, Q) / 2.0
    for n in (1, 3, 7, 12):
        affinity = 1.0 - law_hellinger_sq(iid_law(P, n), iid_law(Q, n)) / 2.0
        assert affinity == pytest.approx(one ** n, abs=1e-12)


def test_equal_mixtures_are_bit_identical(ber):
    a = ExchangeableLaw(5, ((0.25, ber(0.1)), (0.75, ber(0.8))))
    b = ExchangeableLaw(5, ((0.75, ber(0.8)), (0.25, ber(0.1))))
    assert a.components == b.components
    assert law_tv(a, b) == 0.0


def test_mixture_weight_validation(ber):
    with pytest.raises(ValueError):
        ExchangeableLaw(3, ((0.5, ber(0.1)), (0.4, ber(0.2))))
    with pytest.raises(DimensionError):
        law_tv(iid_law(ber(0.1), 3), iid_law(ber(0.1), 4))


def test_enumeration_budget_is_enforced(monkeypatch, ber):
    monkeypatch.setattr(prob_core.Config, 'ENUMERATION_BUDGET', 10)
    with pytest.raises(EnumerationBudgetError):
        law_tv(iid_law(ber(0.1), 20), iid_law(ber(0.2), 20))
