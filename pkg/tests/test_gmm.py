import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mlad import gmm
from mlad import tensorcore as tc
from mlad.errors import ContractError, NumericDomainError


def stats_k1(mu=(0.0, 0.0), sigma=np.eye(2)):
    return gmm.GmmStats(np.array([1.0]), np.array([mu], dtype=float), np.array([sigma], dtype=float))


def test_membership_k1_is_one(rng):
    h = tc.constant(rng.normal(size=(5, 3)))
    y = gmm.membership(h, tc.constant(rng.normal(size=(3, 1))), tc.constant(np.zeros(1)))
    np.testing.assert_array_equal(y.value, np.ones((5, 1)))


def test_membership_zero_weights_is_uniform(rng):
    h = tc.constant(rng.normal(size=(4, 3)))
    y = gmm.membership(h, tc.constant(np.zeros((3, 5))), tc.constant(np.zeros(5)))
    np.testing.assert_allclose(y.value, 0.2, atol=1e-12)


def test_membership_on_simplex(rng):
    for _ in range(100):
        h = tc.constant(rng.normal(size=(3, 4)))
        y = gmm.membership(h, tc.constant(rng.normal(size=(4, 3))), tc.constant(rng.normal(size=3)))
        assert np.all(np.abs(y.value.sum(axis=1) - 1) < 1e-8) and np.all(y.value >= 0)


def test_estimate_by_hand():
    s = gmm.estimate(np.array([[0.0, 0.0], [2.0, 0.0]]), np.ones((2, 1)))
    np.testing.assert_array_equal(s.phi, [1.0])
    np.testing.assert_allclose(s.mu, [[1.0, 0.0]], atol=0)
    np.testing.assert_allclose(s.sigma[0], [[1 + 1e-6, 0], [0, 1e-6]], rtol=0, atol=1e-15)


def test_identical_points_give_epsilon_identity():
    s = gmm.estimate(np.tile([[0.3, -1.2, 4.0]], (6, 1)), np.ones((6, 1)), epsilon=1e-6)
    np.testing.assert_array_equal(s.sigma[0], np.eye(3) * 1e-6)


def test_hard_two_cluster_means(rng):
    a = rng.normal(size=(5, 2)) + 10
    b = rng.normal(size=(7, 2)) - 10
    y = np.vstack([np.tile([1.0, 0.0], (5, 1)), np.tile([0.0, 1.0], (7, 1))])
    s = gmm.estimate(np.vstack([a, b]), y)
    np.testing.assert_allclose(s.mu, [a.mean(0), b.mean(0)], atol=1e-12)
    np.testing.assert_allclose(s.phi, [5 / 12, 7 / 12], atol=1e-15)
    np.testing.assert_allclose(s.sigma[1], np.cov(b.T, bias=True) + 1e-6 * np.eye(2), atol=1e-12)
    s.check()


def test_soft_estimate_matches_weighted_formulas(rng):
    h = rng.normal(size=(9, 3))
    y = rng.dirichlet(np.ones(4), size=9)
    s = gmm.estimate(h, y)
    for k in range(4):
        w = y[:, k]
        mu = w @ h / w.sum()
        d = h - mu
        cov = (w[:, None] * d).T @ d / w.sum() + 1e-6 * np.eye(3)
        np.testing.assert_allclose(s.mu[k], mu, atol=1e-12)
        np.testing.assert_allclose(s.sigma[k], cov, atol=1e-12)
    np.testing.assert_allclose(s.phi, y.mean(axis=0), atol=1e-15)


def test_empty_component_is_inactive():
    y = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    s = gmm.estimate(np.array([[0.0], [1.0], [2.0]]), y)
    assert list(s.active) == [0] and s.phi[1] == 0.0
    assert np.isfinite(gmm.energy(np.array([1.0]), s))


def test_estimate_needs_two_samples():
    with pytest.raises(ContractError):
        gmm.estimate(np.zeros((1, 2)), np.ones((1, 1)))


def test_energy_at_mode_is_log_2pi():
    assert abs(gmm.energy(np.zeros(2), stats_k1()) - np.log(2 * np.pi)) < 1e-9


def test_energy_monotone_in_distance():
    s = stats_k1()
    assert gmm.energy([3.0, 0.0], s) > gmm.energy([1.0, 0.0], s)


def test_energy_symmetric_mixture():
    s = gmm.GmmStats(np.array([0.5, 0.5]), np.array([[-2.0, 0.0], [2.0, 0.0]]),
                     np.array([np.eye(2), np.eye(2)]))
    for x in ([0.7, 0.3], [1.5, -2.0], [-4.0, 1.0]):
        mirrored = [-x[0], x[1]]
        assert gmm.energy(x, s) == pytest.approx(gmm.energy(mirrored, s), abs=1e-12)


def test_energy_matches_scipy(rng):
    K, d = 3, 4
    phi = rng.dirichlet(np.ones(K))
    mu = rng.normal(size=(K, d))
    a = rng.normal(size=(K, d, d))
    sigma = a @ np.swapaxes(a, 1, 2) + 0.5 * np.eye(d)
    s = gmm.GmmStats(phi, mu, sigma)
    h = rng.normal(size=(10, d))
    want = -np.log(sum(phi[k] * multivariate_normal(mu[k], sigma[k]).pdf(h) for k in range(K)))
    np.testing.assert_allclose(gmm.energy(h, s), want, rtol=1e-10)


def test_energy_far_point_stays_finite():
    e = gmm.energy([1e4, 0.0], stats_k1(sigma=np.eye(2) * 1e-6))
    assert np.isfinite(e) and e > 1e10


def test_not_positive_definite():
    bad = stats_k1(sigma=np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(NumericDomainError, match="component 0"):
        gmm.energy([0.0, 0.0], bad)


def test_cov_penalty_examples():
    assert gmm.cov_penalty(stats_k1()) == 2.0
    assert gmm.cov_penalty(stats_k1(sigma=np.diag([0.5, 2.0]))) == 2.5
    assert gmm.cov_penalty(stats_k1(sigma=np.diag([0.4, 2.0]))) > 2.5


def test_composite_gradient(rng):
    h = tc.leaf(rng.normal(size=(6, 3)))
    w = tc.leaf(rng.normal(size=(3, 2)))
    b = tc.leaf(rng.normal(size=2))

    def f():
        y = gmm.membership(h, w, b, 1.5)
        g = gmm.estimate_graph(h, y)
        e = gmm.energy_graph(h, g.phi, g.mu, g.sigma, g.active)
        return tc.add(tc.mean(e), tc.scale(gmm.cov_penalty_graph(g.sigma), 0.01))

    assert tc.grad_check(f, [h, w, b]) < 1e-4
