"""Numerical checks of the five structural/uncertainty propositions.

Each section returns a :class:`CheckSection` holding named sub-checks. The
Laplacian builder is injectable so a deliberately broken one can be shown to
fail.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .bench import BenchConfig, make_dataset, rng_for
from .encoders import (
    ObjectiveWeights,
    encode,
    fit_ridge_encoder,
    lipschitz_bound,
    smoothing_operator,
    train_representations,
)
from .graph import (
    PSD_TOL,
    StructureGraph,
    build_graph,
    connected_components,
    laplacian,
    min_eigenvalue,
    structure_regularizer_pairs,
)
from .reliability import stability
from .selective import optimal_selective_risk, risk_coverage_from_risks
from .uncertainty import chi2_quantile, coverage_shared, mahalanobis_sq_batch, spd_cholesky

LaplacianFn = Callable[[StructureGraph], np.ndarray]


@dataclass
class CheckSection:
    name: str
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    def add(self, label: str, ok: bool, detail: str = "") -> None:
        self.checks.append((label, bool(ok), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


@dataclass
class VerificationReport:
    sections: list[CheckSection]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.sections)

    def render(self) -> str:
        lines = []
        for s in self.sections:
            lines.append(f"[{'PASS' if s.passed else 'FAIL'}] {s.name}")
            for label, ok, detail in s.checks:
                lines.append(f"    {'ok ' if ok else 'BAD'} {label}" + (f"  ({detail})" if detail else ""))
        lines.append("ALL PASS" if self.passed else "FAILURES PRESENT")
        return "\n".join(lines)


# --- instance generators ---------------------------------------------------------


def random_graph(rng: np.random.Generator, n: int, density: float = 0.4) -> StructureGraph:
    edges = [
        (i, j, float(rng.uniform(0.1, 3.0)))
        for i in range(n) for j in range(i + 1, n) if rng.random() < density
    ]
    return build_graph(n, edges)


def connected_graph(rng: np.random.Generator, n: int, extra: int = 0) -> StructureGraph:
    """Random spanning tree plus ``extra`` random chords, unit weights."""
    perm = rng.permutation(n)
    pairs = {tuple(sorted((int(perm[k]), int(perm[rng.integers(k)])))) for k in range(1, n)}
    while len(pairs) < n - 1 + extra:
        i, j = rng.choice(n, 2, replace=False)
        pairs.add((int(min(i, j)), int(max(i, j))))
    return build_graph(n, [(i, j, 1.0) for i, j in sorted(pairs)])


def max_pairwise_distance(Z: np.ndarray) -> float:
    diff = Z[:, None, :] - Z[None, :, :]
    return float(np.sqrt(np.max(np.sum(diff * diff, axis=2))))


# --- sections ---------------------------------------------------------------------


def check_laplacian_identity(seed: int, trials: int = 200, lap: LaplacianFn = laplacian) -> CheckSection:
    sec = CheckSection("laplacian identity: structure regularizer equals the Laplacian quadratic form; L is PSD; convex")
    rng = rng_for(seed, 2)
    worst_rel, worst_eig, worst_cvx = 0.0, np.inf, -np.inf
    for _ in range(trials):
        n, d = int(rng.integers(1, 21)), int(rng.integers(1, 9))
        g = random_graph(rng, n, float(rng.uniform(0.0, 0.8)))
        Z = rng.standard_normal((n, d))
        L = lap(g)
        trace_form = float(np.einsum("ik,ik->", Z, L @ Z))
        pair_form = structure_regularizer_pairs(Z, g)
        worst_rel = max(worst_rel, abs(trace_form - pair_form) / (1.0 + abs(pair_form)))
        worst_eig = min(worst_eig, min_eigenvalue(L))
        Z2 = rng.standard_normal((n, d))
        t = float(rng.random())
        mix = t * Z + (1 - t) * Z2
        r = lambda A: float(np.einsum("ik,ik->", A, L @ A))  # noqa: E731
        worst_cvx = max(worst_cvx, r(mix) - (t * r(Z) + (1 - t) * r(Z2)))
    sec.add("trace form == edge-pair form", worst_rel <= 1e-10, f"max rel err {worst_rel:.2e}")
    sec.add("min Laplacian eigenvalue >= -1e-9", worst_eig >= -PSD_TOL, f"min eig {worst_eig:.2e}")
    sec.add("convexity along random segments", worst_cvx <= 1e-10, f"max gap {worst_cvx:.2e}")
    return sec


def check_consensus(seed: int, lap: LaplacianFn = laplacian) -> CheckSection:
    sec = CheckSection("consensus: structure-only minimizers are constant on connected components")
    rng = rng_for(seed, 1)
    # null space spanned by component indicators
    worst = 0.0
    for _ in range(50):
        g = random_graph(rng, int(rng.integers(2, 21)), float(rng.uniform(0.0, 0.3)))
        L = lap(g)
        for part in connected_components(g):
            ind = np.zeros(g.n)
            ind[part] = 1.0
            worst = max(worst, float(np.max(np.abs(L @ ind))))
    sec.add("L @ component indicator == 0", worst <= 1e-12, f"max |L 1_V| {worst:.2e}")

    wts = ObjectiveWeights(lambda_structure=1.0, task_weight=0.0)
    g = connected_graph(rng, 20, extra=10)
    Z0 = rng.standard_normal((20, 3))
    sigmas = [np.eye(3)] * 20
    Z = train_representations(Z0, sigmas, np.zeros(20, dtype=int), g, wts, steps=20000, lr=0.1)
    spread = max_pairwise_distance(Z)
    sec.add("connected graph: rows collapse", spread < 1e-4, f"max pairwise distance {spread:.2e}")
    drift = float(np.max(np.abs(Z.mean(axis=0) - Z0.mean(axis=0))))
    sec.add("connected graph: common value is the initial mean", drift < 1e-8, f"drift {drift:.2e}")

    g_a = connected_graph(rng, 10, extra=5)
    edges = g_a.weighted_edges() + [(i + 10, j + 10, w) for i, j, w in g_a.weighted_edges()]
    g2 = build_graph(20, edges)
    Z0 = rng.standard_normal((20, 3))
    Z0[10:] += 5.0
    Z = train_representations(Z0, sigmas, np.zeros(20, dtype=int), g2, wts, steps=20000, lr=0.1)
    within = max(max_pairwise_distance(Z[:10]), max_pairwise_distance(Z[10:]))
    between = float(np.linalg.norm(Z[:10].mean(axis=0) - Z[10:].mean(axis=0)))
    sec.add("two components: constant within each", within < 1e-4, f"within spread {within:.2e}")
    sec.add("two components: remain separated", between > 1.0, f"gap {between:.3f}")
    return sec


def check_risk_coverage(seed: int, monotone_trials: int = 500, optimal_trials: int = 100) -> CheckSection:
    sec = CheckSection("risk-coverage: risk-coverage is monotone and optimal under monotone uncertainty")
    rng = rng_for(seed, 3)
    monotone_ok = True
    for _ in range(monotone_trials):
        n = int(rng.integers(1, 200))
        risks = np.sort(rng.random(n))
        # strictly increasing transform keeps the two sequences comonotone
        scores = np.cumsum(rng.random(n) + 1e-3) * float(rng.uniform(0.1, 10.0))
        perm = rng.permutation(n)
        curve = risk_coverage_from_risks(scores[perm], risks[perm])
        monotone_ok &= bool(np.all(np.diff(curve.risk) >= 0))
    sec.add(f"{monotone_trials} comonotone curves non-decreasing", monotone_ok)

    optimal_ok = True
    for _ in range(optimal_trials):
        n = int(rng.integers(1, 13))
        # dyadic risks keep every partial sum exact in floating point
        risks = rng.integers(0, 1025, n) / 1024.0
        scores = risks * 7.0 + 1.0
        curve = risk_coverage_from_risks(scores, risks)
        for k in range(1, n + 1):
            optimal_ok &= curve.risk[k - 1] == optimal_selective_risk(risks, k, exhaustive=True)
    sec.add(f"{optimal_trials} perfect-ranking curves equal the enumerated optimum", optimal_ok)
    return sec


def check_lipschitz_stability(seed: int, probes: int = 10_000) -> CheckSection:
    sec = CheckSection("lipschitz stability: stability is bounded by L^2 * m * tau^2 for Lipschitz encoders")
    cfg = BenchConfig(n_train=1000, n_test=500, seed=seed)
    data = make_dataset(cfg)
    base = fit_ridge_encoder(data.X[data.train], data.Z_star[data.train], 100.0)
    model = base.with_structure(smoothing_operator(data.group_graph, cfg.dim_groups(), 1.0))
    rng = rng_for(seed, 4)
    for structured in (False, True):
        L = lipschitz_bound(model, structured)
        X1 = rng.standard_normal((probes, cfg.m))
        X2 = X1 + rng.standard_normal((probes, cfg.m)) * rng.uniform(0.01, 3.0, (probes, 1))
        lhs = np.linalg.norm(encode(model, X1, structured) - encode(model, X2, structured), axis=1)
        rhs = L * np.linalg.norm(X1 - X2, axis=1) * (1 + 1e-8)
        tag = "smoothed" if structured else "linear"
        sec.add(f"{tag}: pointwise Lipschitz bound on {probes} probes", bool(np.all(lhs <= rhs)), f"L={L:.4f}")
        X = rng.standard_normal((probes, cfg.m))
        for tau in (0.1, 0.5, 1.0):
            est = stability(model, X, tau, seed + 17, structured)
            bound = L * L * cfg.m * tau * tau
            sec.add(f"{tag}: tau={tau} stability <= L^2 m tau^2", est <= bound * 1.01, f"{est:.4g} <= {bound:.4g}")
    X = rng.standard_normal((probes, cfg.m))
    ratio = stability(base, X, 1.0, seed + 5) / stability(base, X, 0.5, seed + 5)
    sec.add("affine encoder: stability scales with tau^2", abs(ratio - 4.0) <= 0.05 * 4.0, f"ratio {ratio:.6f}")
    return sec


def check_coverage(seed: int, n: int = 100_000, dims: tuple[int, ...] = (1, 4, 16)) -> CheckSection:
    sec = CheckSection("gaussian coverage: Gaussian Mahalanobis coverage is exactly calibrated")
    rng = rng_for(seed, 5)
    for d in dims:
        A = rng.standard_normal((d, d))
        sigma = A @ A.T + 0.5 * np.eye(d)
        mus = rng.standard_normal((n, d)) * 3.0
        Z = mus + rng.standard_normal((n, d)) @ np.linalg.cholesky(sigma).T
        m = mahalanobis_sq_batch(Z - mus, np.zeros(d), spd_cholesky(sigma))
        ks = stats.kstest(m, stats.chi2(d).cdf).statistic
        sec.add(f"d={d}: KS(Mahalanobis, chi2_d) < 0.01", ks < 0.01, f"KS {ks:.4f}")
        for alpha in (0.5, 0.9, 0.95):
            emp = coverage_shared(Z, mus, sigma, alpha).empirical
            sec.add(f"d={d}, alpha={alpha}: |coverage - alpha| < 0.005", abs(emp - alpha) < 0.005, f"{emp:.4f}")
    grid_ok = all(
        chi2_quantile(d, a1) < chi2_quantile(d, a2) and chi2_quantile(d, a1) < chi2_quantile(d + 1, a1)
        for d in (1, 2, 5, 16) for a1, a2 in ((0.1, 0.5), (0.5, 0.9), (0.9, 0.99))
    )
    sec.add("chi2 quantile increasing in alpha and d", grid_ok)
    return sec


def verify_propositions(seed: int = 0, lap: LaplacianFn = laplacian) -> VerificationReport:
    return VerificationReport([
        check_consensus(seed, lap),
        check_laplacian_identity(seed, lap=lap),
        check_risk_coverage(seed),
        check_lipschitz_stability(seed),
        check_coverage(seed),
    ])
