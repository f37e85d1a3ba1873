import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from reliarep.graph import build_graph, path_graph, structure_regularizer
from reliarep.uncertainty import (
    GaussianRepr,
    UncertaintyError,
    chi2_cdf,
    chi2_quantile,
    coverage,
    coverage_shared,
    mahalanobis_sq,
    phi,
    psi,
    regularized_lower_gamma,
    structural_uncertainty_regularizer,
    uncertainty_regularizer,
)

# bisection on erf(sqrt(x/2)) for the one-dof chi-square; independent of the gamma code
CHI2_1_95 = 3.841458820694123


def random_spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + 0.1 * np.eye(d)


def test_mahalanobis_examples():
    r = GaussianRepr(np.array([1.0, -2.0]), np.eye(2))
    assert mahalanobis_sq(np.array([1.0, -2.0]), r) == 0.0
    assert mahalanobis_sq(np.array([4.0, 2.0]), r) == pytest.approx(25.0, rel=1e-14)
    r = GaussianRepr(np.zeros(2), np.diag([4.0, 1.0]))
    assert mahalanobis_sq(np.array([2.0, 1.0]), r) == pytest.approx(2.0, rel=1e-14)


def test_non_spd_rejected():
    with pytest.raises(UncertaintyError):
        GaussianRepr(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(UncertaintyError):
        GaussianRepr(np.zeros(2), np.diag([1.0, 1e-12]))


def test_mahalanobis_rotation_invariance(rng):
    for d in (2, 5, 9):
        sigma = random_spd(rng, d)
        delta = rng.normal(size=d)
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        a = mahalanobis_sq(delta, GaussianRepr(np.zeros(d), sigma))
        b = mahalanobis_sq(Q @ delta, GaussianRepr(np.zeros(d), Q @ sigma @ Q.T))
        assert abs(a - b) <= 1e-8 * max(1.0, a)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 8.0, 30.0])
@pytest.mark.parametrize("x", [1e-3, 0.5, 2.0, 7.5, 40.0])
def test_regularized_gamma_matches_scipy(a, x):
    from scipy.special import gammainc

    assert regularized_lower_gamma(a, x) == pytest.approx(gammainc(a, x), abs=1e-13)


def test_chi2_quantile_exponential_case():
    alpha = 1 - math.exp(-1)
    assert chi2_quantile(2, alpha) == pytest.approx(2.0, abs=1e-10)


def test_chi2_quantile_one_dof():
    assert chi2_quantile(1, 0.95) == pytest.approx(CHI2_1_95, abs=1e-10)


def test_chi2_quantile_small_alpha():
    assert chi2_quantile(3, 1e-12) < 1e-6


@pytest.mark.parametrize("d", [1, 2, 3, 7, 16, 64])
@pytest.mark.parametrize("alpha", [1e-6, 0.05, 0.5, 0.9, 0.999])
def test_chi2_quantile_inverts_cdf(d, alpha):
    q = chi2_quantile(d, alpha)
    assert abs(chi2_cdf(q, d) - alpha) <= 1e-10
    assert q == pytest.approx(stats.chi2.ppf(alpha, d), rel=1e-9)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_chi2_quantile_rejects_alpha(alpha):
    with pytest.raises(UncertaintyError):
        chi2_quantile(3, alpha)


def test_chi2_quantile_monotone_grid():
    alphas = [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99]
    for d in range(1, 20):
        qs = [chi2_quantile(d, a) for a in alphas]
        assert all(b > a for a, b in zip(qs, qs[1:]))
        assert all(chi2_quantile(d + 1, a) > q for a, q in zip(alphas, qs))


def test_coverage_exact_draws_large_n():
    rng = np.random.default_rng(1)
    d, n = 3, 100_000
    sigma = random_spd(rng, d)
    mus = rng.normal(size=(n, d))
    Z = mus + rng.normal(size=(n, d)) @ np.linalg.cholesky(sigma).T
    rep = coverage_shared(Z, mus, sigma, 0.9)
    assert rep.n == n
    assert abs(rep.empirical - 0.9) <= 0.005
    assert coverage_shared(Z, mus, 4 * sigma, 0.9).empirical > 0.9


def test_coverage_list_form_agrees_with_shared(rng):
    d, n = 4, 300
    sigma = random_spd(rng, d)
    mus = rng.normal(size=(n, d))
    Z = mus + rng.normal(size=(n, d)) @ np.linalg.cholesky(sigma).T
    reprs = [GaussianRepr(m, sigma) for m in mus]
    for a in (0.5, 0.9):
        assert coverage(list(Z), reprs, a).empirical == coverage_shared(Z, mus, sigma, a).empirical


def test_coverage_at_means_is_one(rng):
    reprs = [GaussianRepr(rng.normal(size=2), np.eye(2)) for _ in range(10)]
    for a in (0.01, 0.5, 0.99):
        assert coverage([r.mu for r in reprs], reprs, a).empirical == 1.0


def test_coverage_errors():
    r = GaussianRepr(np.zeros(1), np.eye(1))
    with pytest.raises(UncertaintyError):
        coverage([np.zeros(1)], [r, r], 0.5)
    with pytest.raises(UncertaintyError):
        coverage([], [], 0.5)


@pytest.mark.parametrize("d", [1, 4, 16])
def test_mahalanobis_statistic_is_chi2(d):
    rng = np.random.default_rng(100 + d)
    sigma = random_spd(rng, d)
    L = np.linalg.cholesky(sigma)
    Z = rng.normal(size=(50_000, d)) @ L.T
    r = GaussianRepr(np.zeros(d), sigma)
    from reliarep.uncertainty import mahalanobis_sq_batch

    m = mahalanobis_sq_batch(Z, r.mu, r.chol)
    assert stats.kstest(m, stats.chi2(d).cdf).statistic < 0.01


@pytest.mark.parametrize("alpha", [0.5, 0.9, 0.95])
def test_coverage_convergence_band(alpha):
    rng = np.random.default_rng(int(alpha * 100))
    n, d = 100_000, 4
    sigma = random_spd(rng, d)
    mus = rng.normal(size=(n, d))
    Z = mus + rng.normal(size=(n, d)) @ np.linalg.cholesky(sigma).T
    emp = coverage_shared(Z, mus, sigma, alpha).empirical
    assert abs(emp - alpha) < 3 * math.sqrt(alpha * (1 - alpha) / n)


def test_phi_examples():
    for d in (1, 3, 6):
        assert phi(np.eye(d), "trace") == d
        assert phi(np.eye(d), "logdet") == 0.0
    assert phi(np.diag([2.0, 8.0]), "logdet") == pytest.approx(math.log(16), rel=1e-14)
    with pytest.raises(UncertaintyError):
        phi(np.eye(2), "entropy")


def test_uncertainty_regularizer(rng):
    S = random_spd(rng, 3)
    reprs = [GaussianRepr(rng.normal(size=3), S) for _ in range(5)]
    for mode in ("trace", "logdet"):
        assert uncertainty_regularizer(reprs, mode) == pytest.approx(phi(S, mode), rel=1e-12)
    cs = rng.uniform(0.5, 3.0, 6)
    reprs = [GaussianRepr(np.zeros(4), c * np.eye(4)) for c in cs]
    assert uncertainty_regularizer(reprs, "trace") == pytest.approx(4 * cs.mean(), rel=1e-12)
    doubled = [GaussianRepr(r.mu, 2 * r.sigma) for r in reprs]
    assert uncertainty_regularizer(doubled) == pytest.approx(2 * uncertainty_regularizer(reprs), rel=1e-12)
    with pytest.raises(UncertaintyError):
        uncertainty_regularizer([])


def test_psi_examples(rng):
    S = random_spd(rng, 3)
    assert psi(S, S) == 0.0
    assert psi(np.diag([1.0, 1.0]), np.diag([2.0, 1.0])) == 1.0
    for _ in range(20):
        a, b = random_spd(rng, 4), random_spd(rng, 4)
        assert psi(a, b) == psi(b, a)
        assert psi(a, b) > 0
    with pytest.raises(UncertaintyError):
        psi(np.eye(2), np.eye(3))


def test_structural_uncertainty_regularizer(rng):
    g = build_graph(5, [(0, 1, 1.0), (1, 2, 0.5), (3, 4, 2.0), (0, 4, 1.0)])
    S = random_spd(rng, 3)
    mus = rng.normal(size=(5, 3))
    reprs = [GaussianRepr(m, S) for m in mus]
    assert structural_uncertainty_regularizer(reprs, g) == pytest.approx(structure_regularizer(mus, g), rel=1e-12)
    same = [GaussianRepr(mus[0], S)] * 5
    assert structural_uncertainty_regularizer(same, g) <= 1e-12
    path = [GaussianRepr(np.array([float(i)]), np.eye(1)) for i in range(3)]
    assert structural_uncertainty_regularizer(path, path_graph(3)) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(UncertaintyError):
        structural_uncertainty_regularizer(path, path_graph(4))


def test_structural_uncertainty_psi_term():
    g = path_graph(2)
    reprs = [GaussianRepr(np.zeros(2), np.eye(2)), GaussianRepr(np.zeros(2), np.diag([2.0, 1.0]))]
    assert structural_uncertainty_regularizer(reprs, g) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.floats(1e-6, 1 - 1e-6))
def test_chi2_quantile_property(d, alpha):
    q = chi2_quantile(d, alpha)
    assert q > 0
    assert abs(chi2_cdf(q, d) - alpha) <= 1e-10
