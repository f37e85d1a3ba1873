"""Gaussian representation-level uncertainty.

Each representation is a Gaussian ``N(mu, Sigma)``. This module provides the
Mahalanobis statistic, chi-square quantiles, empirical coverage, the scalar
uncertainty measures used as regularizers, and the structure-aware
uncertainty regularizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .graph import StructureGraph, structure_regularizer

SPD_TOL = 1e-10


class UncertaintyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianRepr:
    mu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        d = mu.shape[0]
        if mu.ndim != 1 or not np.all(np.isfinite(mu)):
            raise UncertaintyError("mu must be a finite vector")
        if sigma.shape != (d, d):
            raise UncertaintyError(f"sigma must be {d}x{d}, got {sigma.shape}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", spd_cholesky(sigma))

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class CoverageReport:
    alpha: float
    empirical: float
    n: int


def spd_cholesky(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises ``UncertaintyError`` when ``sigma`` is not symmetric or has an
    eigenvalue at or below ``SPD_TOL``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-12):
        raise UncertaintyError("covariance is not symmetric")
    try:
        chol = np.linalg.cholesky(0.5 * (sigma + sigma.T))
    except np.linalg.LinAlgError as exc:
        raise UncertaintyError("covariance is not positive definite") from exc
    if np.linalg.eigvalsh(0.5 * (sigma + sigma.T))[0] <= SPD_TOL:
        raise UncertaintyError("covariance has an eigenvalue below the SPD tolerance")
    return chol


def mahalanobis_sq_batch(Z: np.ndarray, mu: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Rowwise ``(z - mu)^T Sigma^{-1} (z - mu)`` given the Cholesky factor of Sigma."""
    diff = np.atleast_2d(np.asarray(Z, dtype=float) - mu)
    white = solve_triangular(chol, diff.T, lower=True)
    return np.einsum("ij,ij->j", white, white)


def mahalanobis_sq(z: np.ndarray, repr: GaussianRepr) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != repr.mu.shape:
        raise UncertaintyError(f"dimension mismatch: {z.shape} vs {repr.mu.shape}")
    return float(mahalanobis_sq_batch(z, repr.mu, repr.chol)[0])


# --- regularized incomplete gamma -------------------------------------------

_EPS = 1e-16
_MAX_ITER = 10_000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by its power series; converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a: float, x: float) -> float:
    # Q(a, x) by modified Lentz evaluation of the continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_lower_gamma(a: float, x: float) -> float:
    """``P(a, x) = gamma(a, x) / Gamma(a)`` for ``a > 0``, ``x >= 0``."""
    if a <= 0:
        raise UncertaintyError("shape parameter must be positive")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(_gamma_series(a, x), 1.0)
    return max(1.0 - _gamma_contfrac(a, x), 0.0)


def chi2_cdf(x: float, d: int) -> float:
    return regularized_lower_gamma(0.5 * d, 0.5 * x)


def chi2_quantile(d: int, alpha: float) -> float:
    """Alpha-quantile of the chi-square distribution with ``d`` degrees of freedom.

    Brackets the root by doubling, then bisects until the bracket collapses to
    adjacent floats.
    """
    if int(d) != d or d < 1:
        raise UncertaintyError(f"degrees of freedom must be a positive integer, got {d}")
    if not 0.0 < alpha < 1.0:
        raise UncertaintyError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = 0.0, max(1.0, float(d))
    while chi2_cdf(hi, d) < alpha:
        lo, hi = hi, 2.0 * hi
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if chi2_cdf(mid, d) < alpha:
            lo = mid
        else:
            hi = mid
    return hi


# --- coverage -----------------------------------------------------------------


def coverage(samples: Sequence[np.ndarray], reprs: Sequence[GaussianRepr], alpha: float) -> CoverageReport:
    """Fraction of samples inside their alpha-level Mahalanobis ellipsoid."""
    if len(samples) != len(reprs):
        raise UncertaintyError(f"{len(samples)} samples but {len(reprs)} representations")
    if len(samples) == 0:
        raise UncertaintyError("coverage of an empty sample")
    d = reprs[0].dim
    q = chi2_quantile(d, alpha)
    inside = sum(mahalanobis_sq(z, r) <= q for z, r in zip(samples, reprs))
    return CoverageReport(alpha, inside / len(samples), len(samples))


def coverage_shared(Z: np.ndarray, means: np.ndarray, sigma: np.ndarray, alpha: float) -> CoverageReport:
    """Coverage when every sample shares one covariance ``sigma``.

    Vectorized equivalent of :func:`coverage` for ``N(means[i], sigma)``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    means = np.atleast_2d(np.asarray(means, dtype=float))
    if Z.shape != means.shape:
        raise UncertaintyError(f"shape mismatch: {Z.shape} vs {means.shape}")
    if Z.shape[0] == 0:
        raise UncertaintyError("coverage of an empty sample")
    chol = spd_cholesky(sigma)
    m = mahalanobis_sq_batch(Z - means, np.zeros(Z.shape[1]), chol)
    q = chi2_quantile(Z.shape[1], alpha)
    return CoverageReport(alpha, float(np.mean(m <= q)), Z.shape[0])


# --- regularizers -------------------------------------------------------------


def phi(repr: GaussianRepr | np.ndarray, mode: str = "trace") -> float:
    """Scalar uncertainty measure of a covariance: its trace or log-determinant."""
    if isinstance(repr, GaussianRepr):
        sigma, chol = repr.sigma, repr.chol
    else:
        sigma = np.atleast_2d(np.asarray(repr, dtype=float))
        chol = spd_cholesky(sigma)
    if mode == "trace":
        return float(np.trace(sigma))
    if mode == "logdet":
        return float(2.0 * np.sum(np.log(np.diag(chol))))
    raise UncertaintyError(f"unknown phi mode {mode!r}")


def uncertainty_regularizer(reprs: Sequence[GaussianRepr], mode: str = "trace") -> float:
    if len(reprs) == 0:
        raise UncertaintyError("uncertainty regularizer of an empty list")
    return float(np.mean([phi(r, mode) for r in reprs]))


def _sigma_of(x: GaussianRepr | np.ndarray) -> np.ndarray:
    return x.sigma if isinstance(x, GaussianRepr) else np.atleast_2d(np.asarray(x, dtype=float))


def psi(a: GaussianRepr | np.ndarray, b: GaussianRepr | np.ndarray) -> float:
    """Squared Frobenius distance between two covariance matrices."""
    sa, sb = _sigma_of(a), _sigma_of(b)
    if sa.shape != sb.shape:
        raise UncertaintyError(f"dimension mismatch: {sa.shape} vs {sb.shape}")
    diff = sa - sb
    return float(np.sum(diff * diff))


def structural_uncertainty_regularizer(reprs: Sequence[GaussianRepr], g: StructureGraph) -> float:
    """Edge sum of ``w_ij * (||mu_i - mu_j||^2 + psi(Sigma_i, Sigma_j))``."""
    if len(reprs) != g.n:
        raise UncertaintyError(f"{len(reprs)} representations for a graph on {g.n} nodes")
    mus = np.stack([r.mu for r in reprs])
    total = structure_regularizer(mus, g)
    for i, j in g.edges:
        total += g.weights[i, j] * psi(reprs[i], reprs[j])
    return total
