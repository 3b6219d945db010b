import json

import numpy as np
import pytest

from channels import (
    Channel,
    ClassesNotDistinctError,
    ConstructionImpossibleError,
    DegenerateClassError,
    OrderingError,
    bernoulli_symmetrizer,
    collinearity_check,
    compose,
    gamma_star,
    gamma_transform,
    likelihood_ratios,
    merge_hellinger_delta,
    merge_symbols,
    push_forward,
    separating_channel,
    separation_margin,
    sign_channel,
    sort_by_likelihood_ratio,
    symmetrizer_coefficients,
)
from prob_core import DimensionError, FiniteDistribution, hellinger_sq


def random_channel(rng, m_in, m_out):
    return Channel(rng.dirichlet(np.ones(m_out), size=m_in))


def random_distribution(rng, m):
    return FiniteDistribution(rng.dirichlet(np.ones(m)))


def test_channel_validation():
    with pytest.raises(ValueError):
        Channel([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ValueError):
        Channel([0.5, 0.5])
    W = Channel.identity(3)
    with pytest.raises(ValueError):
        W.rows[0, 0] = 0.0


def test_push_forward_examples(ber, rng):
    mu = random_distribution(rng, 4)
    assert push_forward(Channel.identity(4), mu).isclose(mu)
    assert push_forward(Channel.constant(4, 3, 0), mu).tolist() == [1.0, 0.0, 0.0]
    W = Channel([[1 / 6, 5 / 6], [1.0, 0.0]])
    assert push_forward(W, ber(0.2))[0] == pytest.approx(1 / 3)
    with pytest.raises(DimensionError):
        push_forward(W, mu)


def test_compose_is_associative_with_push_forward(rng):
    R, W = random_channel(rng, 3, 3), random_channel(rng, 3, 3)
    mu = random_distribution(rng, 3)
    direct = push_forward(compose(W, R), mu)
    stepwise = push_forward(W, push_forward(R, mu))
    assert np.allclose(direct.probs, stepwise.probs, atol=1e-14)
    assert compose(Channel.identity(3), R) == R


def test_compose_reproduces_mixture(ber):
    p0, p2, theta = 0.1, 0.7, 0.25
    R = Channel.from_bernoulli_rows([p0, p2])
    out = push_forward(R, ber(theta))
    assert out[1] == pytest.approx(theta * p2 + (1 - theta) * p0)


def test_collinearity_check_examples(ber):
    witness = collinearity_check(ber(0.2), ber(0.4), ber(0.6))
    assert witness is not None
    assert (witness.a, witness.b, witness.c) == (0, 2, 1)
    assert witness.theta == pytest.approx(0.5)

    e = [FiniteDistribution.point_mass(3, i) for i in range(3)]
    assert collinearity_check(*e) is None

    degenerate = collinearity_check(ber(0.3), ber(0.3), ber(0.5))
    assert degenerate.degenerate
    assert degenerate.theta in (0.0, 1.0)


def test_separating_channel_worked_example():
    mu0 = FiniteDistribution([0.5, 0.5, 0.0])
    mu1 = FiniteDistribution([0.5, 0.0, 0.5])
    mu2 = FiniteDistribution([0.0, 0.5, 0.5])
    W = separating_channel(mu0, mu1, mu2, direction=[2, 1, 1], scale=1 / 8)
    assert W.rows[:, 1] == pytest.approx([0.75, 0.625, 0.625])
    assert push_forward(W, mu0)[1] == pytest.approx(0.6875)
    assert push_forward(W, mu1)[1] == pytest.approx(0.6875)
    assert push_forward(W, mu2)[1] == pytest.approx(0.625)
    assert separation_margin(W, mu0, mu2) == pytest.approx(0.0625)


def test_separating_channel_on_random_triples(rng):
    for _ in range(100):
        m = int(rng.integers(3, 6))
        mus = [random_distribution(rng, m) for _ in range(3)]
        W = separating_channel(*mus)
        P0, P1, P2 = (push_forward(W, mu) for mu in mus)
        assert np.max(np.abs(P0.probs - P1.probs)) <= 1e-10
        assert np.max(np.abs(P0.probs - P2.probs)) > 1e-10


def test_separating_channel_rejects_collinear(ber):
    with pytest.raises(ConstructionImpossibleError):
        separating_channel(ber(0.2), ber(0.6), ber(0.4))


def test_sign_channel(ber):
    W = sign_channel(FiniteDistribution([0.6, 0.4]), FiniteDistribution([0.4, 0.6]))
    assert W.rows.tolist() == [[0.0, 1.0], [1.0, 0.0]]
    with pytest.raises(ValueError):
        sign_channel(ber(0.3), ber(0.3))


def test_sign_channel_separates_collinear_triple():
    mu0 = FiniteDistribution([0.5, 0.3, 0.2])
    mu2 = FiniteDistribution([0.1, 0.3, 0.6])
    mu1 = FiniteDistribution(0.5 * mu0.probs + 0.5 * mu2.probs)
    W = sign_channel(mu0, mu2)
    means = [push_forward(W, mu)[1] for mu in (mu0, mu1, mu2)]
    assert len({round(x, 12) for x in means}) == 3


def test_bernoulli_symmetrizer_example():
    m, k = symmetrizer_coefficients(0.2, 0.6)
    assert m == pytest.approx(5 / 6)
    assert k == pytest.approx(1 / 6)
    W, p, q = bernoulli_symmetrizer(0.2, 0.6, 0.4)
    assert p == pytest.approx(1 / 3)
    assert q == pytest.approx(1 / 2)
    f1 = push_forward(W, FiniteDistribution.bernoulli(0.6))[0]
    assert p + f1 == pytest.approx(1.0)


def test_bernoulli_symmetrizer_extremes():
    W, p, q = bernoulli_symmetrizer(0.0, 1.0, 0.5)
    f1 = push_forward(W, FiniteDistribution.bernoulli(1.0))[0]
    assert p + f1 == pytest.approx(1.0)
    assert q != pytest.approx(p)
    assert q != pytest.approx(1 - p)


def test_bernoulli_symmetrizer_errors():
    with pytest.raises(DegenerateClassError):
        bernoulli_symmetrizer(0.3, 0.3, 0.5)
    with pytest.raises(ClassesNotDistinctError):
        bernoulli_symmetrizer(0.3, 0.7, 0.3)


def test_merge_equal_ratio_preserves_hellinger(ber):
    W = Channel([[0.1, 0.2, 0.7], [0.2, 0.4, 0.4]])
    merged = merge_symbols(W, 0, 1)
    assert merged.rows == pytest.approx(np.array([[0.3, 0.7], [0.6, 0.4]]))
    before = hellinger_sq(push_forward(W, ber(0.2)), push_forward(W, ber(0.9)))
    after = hellinger_sq(push_forward(merged, ber(0.2)), push_forward(merged, ber(0.9)))
    assert abs(before - after) <= 1e-12
    assert abs(merge_hellinger_delta(W, 0, 1, ber(0.2), ber(0.9))) <= 1e-12


def test_merge_zero_symbols_keeps_hellinger(ber):
    W = Channel([[0.5, 0.0, 0.0, 0.5], [0.2, 0.0, 0.0, 0.8]])
    merged = merge_symbols(W, 1, 2)
    assert hellinger_sq(push_forward(W, ber(0.3)), push_forward(W, ber(0.6))) == pytest.approx(
        hellinger_sq(push_forward(merged, ber(0.3)), push_forward(merged, ber(0.6))), abs=1e-15)


def test_merge_delta_matches_hellinger_change(rng, ber):
    for _ in range(100):
        W = random_channel(rng, 2, 4)
        mu_a, mu_b = ber(float(rng.random())), ber(float(rng.random()))
        merged = merge_symbols(W, 1, 3)
        before = hellinger_sq(push_forward(W, mu_a), push_forward(W, mu_b))
        after = hellinger_sq(push_forward(merged, mu_a), push_forward(merged, mu_b))
        assert before - after == pytest.approx(merge_hellinger_delta(W, 1, 3, mu_a, mu_b), abs=1e-12)
        assert merge_hellinger_delta(W, 1, 3, mu_a, mu_b) >= -1e-15


def test_gamma_star_example():
    gamma = gamma_star(0.1, 0.4, 0.3, 0.6)
    assert gamma == pytest.approx(1 / 6)
    transformed = (0.1 * (1 - gamma) + gamma) / (0.4 * (1 - gamma) + gamma)
    assert transformed == pytest.approx(0.5)
    assert gamma_star(0.1, 0.2, 0.2, 0.4) == 0.0
    with pytest.raises(OrderingError):
        gamma_star(0.3, 0.6, 0.1, 0.4)


def test_gamma_transform_endpoints():
    W = Channel([[0.1, 0.3, 0.6], [0.4, 0.6, 0.0]])
    assert gamma_transform(W, 0.0) == W
    assert gamma_transform(W, 1.0).rows.tolist() == [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
    with pytest.raises(OrderingError):
        gamma_transform(Channel([[0.6, 0.3, 0.1], [0.0, 0.6, 0.4]]), 0.5)


def test_gamma_star_equalizes_ratios_and_merge_preserves_hellinger(rng, ber):
    checked = 0
    while checked < 1000:
        W, _ = sort_by_likelihood_ratio(random_channel(rng, 2, 3))
        ratios = likelihood_ratios(W)
        if ratios[1] > 1.0:
            continue
        a0, a1 = W.rows[:, 0]
        b0, b1 = W.rows[:, 1]
        T = gamma_transform(W, gamma_star(a0, a1, b0, b1))
        new = likelihood_ratios(T)
        assert new[0] == pytest.approx(new[1], rel=1e-9)
        mu_a, mu_b = ber(float(rng.random())), ber(float(rng.random()))
        assert abs(merge_hellinger_delta(T, 0, 1, mu_a, mu_b)) <= 1e-12
        checked += 1


def test_sort_by_likelihood_ratio():
    W = Channel([[0.5, 0.1, 0.4], [0.1, 0.5, 0.4]])
    sorted_w, order = sort_by_likelihood_ratio(W)
    assert order == (1, 2, 0)
    assert np.all(np.diff(likelihood_ratios(sorted_w)) >= 0)


def test_channel_json_round_trip(tmp_path):
    W = Channel([[0.25, 0.75], [1.0, 0.0]])
    path = tmp_path / 'w.json'
    path.write_text(json.dumps(W.to_json()))
    assert Channel.load(path) == W
    with pytest.raises(FileNotFoundError):
        Channel.load(tmp_path / 'missing.json')
