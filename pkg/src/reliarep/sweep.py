"""Four-variant sweep over test-time input noise and structural corruption.

Every grid cell is a pure function of the configuration and its seeds, so
cells can be evaluated in any order (or concurrently) and merged by key.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .bench import BenchConfig, SynthDataset, inject_noise, make_dataset, rng_for
from .encoders import EncoderModel, encode, fit_ridge_encoder, smoothing_operator
from .graph import corrupt
from .reliability import displacement_stats, robustness
from .selective import (
    RiskCoverageCurve,
    SoftmaxClassifier,
    SoftmaxHyper,
    class_prototypes,
    ece,
    evaluate_classifier,
    risk_coverage_curve,
    train_softmax,
    uncertainty_scores,
)
from .uncertainty import coverage_shared

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "uq-only", "structure-only", "full")
USES_STRUCTURE = {"baseline": False, "uq-only": False, "structure-only": True, "full": True}
USES_UNCERTAINTY = {"baseline": False, "uq-only": True, "structure-only": False, "full": True}
ALPHAS = (0.5, 0.9, 0.95)

COLUMNS = (
    "variant", "tau", "p", "corruption_seed", "accuracy", "ece", "stability", "stability_l2",
    "robustness", "coverage_0.5", "coverage_0.9", "coverage_0.95", "risk_at_50", "risk_at_100",
    "curve", "error",
)
METRICS = (
    "accuracy", "ece", "stability", "stability_l2", "robustness",
    "coverage_0.5", "coverage_0.9", "coverage_0.95", "risk_at_50", "risk_at_100",
)

# stream ids under the bench seed
_STREAM_CORRUPT = 101
_STREAM_TEST_NOISE = 102


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    bench: BenchConfig = field(default_factory=BenchConfig)
    tau_grid: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0)
    p_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.4)
    variants: tuple[str, ...] = VARIANTS
    corruption_seeds: int = 5
    gamma: float = 1.0
    lambda_ridge: float = 100.0
    classifier: SoftmaxHyper = field(default_factory=SoftmaxHyper)
    ece_bins: int = 15
    workers: int = 1
    out_dir: str | None = None

    def __post_init__(self) -> None:
        for name in ("tau_grid", "p_grid", "variants"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.tau_grid or not self.p_grid or not self.variants:
            raise ConfigError("tau_grid, p_grid and variants must be nonempty")
        if any(not math.isfinite(t) or t < 0 for t in self.tau_grid):
            raise ConfigError("tau values must be finite and nonnegative")
        if any(not 0 <= p <= 1 for p in self.p_grid):
            raise ConfigError("corruption probabilities must lie in [0, 1]")
        if len(set(self.tau_grid)) != len(self.tau_grid) or len(set(self.p_grid)) != len(self.p_grid):
            raise ConfigError("grid values must be distinct")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or len(set(self.variants)) != len(self.variants):
            raise ConfigError(f"variants must be distinct members of {VARIANTS}, got {self.variants}")
        if self.corruption_seeds < 1 or self.ece_bins < 1 or self.workers < 1:
            raise ConfigError("corruption_seeds, ece_bins and workers must be positive")
        if self.gamma < 0 or not self.lambda_ridge > 0:
            raise ConfigError("need gamma >= 0 and lambda_ridge > 0")
        hp = self.classifier
        if not hp.lr > 0 or hp.steps < 1 or hp.l2 < 0:
            raise ConfigError("classifier needs lr > 0, steps >= 1, l2 >= 0")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["bench"] = self.bench.to_dict()
        for k in ("tau_grid", "p_grid", "variants"):
            out[k] = list(out[k])
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "SweepConfig":
        """Build from a JSON object, rejecting unknown keys at every level."""
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        _reject_unknown(raw, {f.name for f in dataclasses.fields(cls)}, "config")
        kw: dict[str, Any] = dict(raw)
        try:
            if "bench" in kw:
                _reject_unknown(kw["bench"], {f.name for f in dataclasses.fields(BenchConfig)}, "bench")
                kw["bench"] = BenchConfig(**kw["bench"])
            if "classifier" in kw:
                _reject_unknown(kw["classifier"], {f.name for f in dataclasses.fields(SoftmaxHyper)}, "classifier")
                kw["classifier"] = SoftmaxHyper(**kw["classifier"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _reject_unknown(raw: Any, allowed: set[str], where: str) -> None:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")


def load_config(path: str | Path) -> SweepConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return SweepConfig.from_dict(raw)


# --- results ---------------------------------------------------------------------

CellKey = tuple[str, float, float, int]


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.9g}"
    return str(v)


def curve_name(variant: str, tau: float, p: float) -> str:
    return f"{variant}_tau{tau:g}_p{p:g}.csv"


@dataclass
class SweepResult:
    rows: dict[CellKey, dict[str, Any]] = field(default_factory=dict)
    # risk-coverage curves averaged over corruption seeds, per (variant, tau, p)
    curves: dict[tuple[str, float, float], RiskCoverageCurve] = field(default_factory=dict)
    variant_order: tuple[str, ...] = VARIANTS

    def sorted_keys(self) -> list[CellKey]:
        order = {v: i for i, v in enumerate(self.variant_order)}
        return sorted(self.rows, key=lambda k: (order.get(k[0], len(order)), k[0], k[1], k[2], k[3]))

    def merge(self, other: "SweepResult") -> "SweepResult":
        clash = set(self.rows) & set(other.rows)
        if clash:
            raise ValueError(f"overlapping cells: {sorted(clash)[:3]}")
        return SweepResult({**self.rows, **other.rows}, {**self.curves, **other.curves}, self.variant_order)

    def to_csv(self) -> str:
        lines = [",".join(COLUMNS)]
        for key in self.sorted_keys():
            row = self.rows[key]
            lines.append(",".join(_fmt(row.get(c)) for c in COLUMNS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SweepResult":
        lines = text.strip().splitlines()
        header = lines[0].split(",")
        if tuple(header) != COLUMNS:
            raise ConfigError("unexpected result CSV header")
        rows = {}
        for ln in lines[1:]:
            vals = dict(zip(header, ln.split(",")))
            row: dict[str, Any] = {
                "variant": vals["variant"],
                "tau": float(vals["tau"]),
                "p": float(vals["p"]),
                "corruption_seed": int(vals["corruption_seed"]),
                "curve": vals["curve"] or None,
                "error": vals["error"] or None,
            }
            for m in METRICS:
                row[m] = float(vals[m]) if vals[m] else None
            rows[(row["variant"], row["tau"], row["p"], row["corruption_seed"])] = row
        return cls(rows)

    def metric_grid(self, metric: str, variant: str) -> tuple[list[float], list[float], np.ndarray]:
        """Seed-averaged ``metric`` as a (tau x p) array for one variant."""
        if metric not in METRICS:
            raise KeyError(f"unknown metric {metric!r}; choose from {METRICS}")
        cells = [r for r in self.rows.values() if r["variant"] == variant]
        if not cells:
            raise KeyError(f"no rows for variant {variant!r}")
        taus = sorted({r["tau"] for r in cells})
        ps = sorted({r["p"] for r in cells})
        grid = np.full((len(taus), len(ps)), np.nan)
        for i, t in enumerate(taus):
            for j, p in enumerate(ps):
                vals = [r[metric] for r in cells if r["tau"] == t and r["p"] == p and r.get(metric) is not None]
                if vals:
                    grid[i, j] = float(np.mean(vals))
        return taus, ps, grid

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "curves").mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.to_csv())
        for (variant, tau, p), curve in sorted(self.curves.items()):
            (out / "curves" / curve_name(variant, tau, p)).write_text(curve.to_csv())


# --- pipeline --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SweepContext:
    """Everything shared by the grid cells: data, fitted encoder, classifiers."""

    cfg: SweepConfig
    data: SynthDataset
    base: EncoderModel
    model_star: EncoderModel
    classifiers: dict[bool, SoftmaxClassifier]
    prototypes: dict[bool, np.ndarray]
    _noisy: dict[tuple[float, int], np.ndarray] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def noisy_test(self, tau: float, seed: int) -> np.ndarray:
        """Test inputs perturbed at level ``tau``; memoized since every variant and p reuses them."""
        with self._lock:
            hit = self._noisy.get((tau, seed))
        if hit is None:
            hit = inject_noise(self.data.X[self.data.test], tau, seed)
            with self._lock:
                self._noisy[(tau, seed)] = hit
        return hit


def prepare(cfg: SweepConfig, data: SynthDataset | None = None) -> SweepContext:
    data = data if data is not None else make_dataset(cfg.bench)
    bc = cfg.bench
    tr = data.train
    base = fit_ridge_encoder(data.X[tr], data.Z_star[tr], cfg.lambda_ridge)
    M_star = smoothing_operator(data.group_graph, bc.dim_groups(), cfg.gamma)
    model_star = base.with_structure(M_star, cfg.gamma)
    classifiers, prototypes = {}, {}
    for structured in sorted({USES_STRUCTURE[v] for v in cfg.variants}):
        feats = encode(model_star if structured else base, data.X[tr], structured)
        name = "structure" if structured else "base"
        classifiers[structured] = train_softmax(feats, data.labels[tr], cfg.classifier, bc.K, name, structured)
        prototypes[structured] = class_prototypes(feats, data.labels[tr], bc.K)
    return SweepContext(cfg, data, base, model_star, classifiers, prototypes)


def corrupted_model(ctx: SweepContext, p: float, corruption_seed: int) -> EncoderModel:
    bc = ctx.cfg.bench
    # the corruption stream ignores p, so flips at smaller p are nested in flips at larger p
    seed = int(rng_for(bc.seed, _STREAM_CORRUPT, corruption_seed).integers(2**63))
    g_prime = corrupt(ctx.data.group_graph, p, seed)
    return ctx.base.with_structure(smoothing_operator(g_prime, bc.dim_groups(), ctx.cfg.gamma), ctx.cfg.gamma)


def noise_seed(ctx: SweepContext, corruption_seed: int) -> int:
    # shared across tau so perturbations are paired
    return int(rng_for(ctx.cfg.bench.seed, _STREAM_TEST_NOISE, corruption_seed).integers(2**63))


def evaluate_cell(ctx: SweepContext, variant: str, tau: float, p: float, corruption_seed: int) -> tuple[dict, RiskCoverageCurve | None]:
    """Metrics for one (variant, tau, p, corruption seed) cell."""
    structured = USES_STRUCTURE[variant]
    te = ctx.data.test
    X_test, y_test = ctx.data.X[te], ctx.data.labels[te]
    nseed = noise_seed(ctx, corruption_seed)
    X_noisy = ctx.noisy_test(tau, nseed)
    model = corrupted_model(ctx, p, corruption_seed) if structured else ctx.base

    feats = encode(model, X_noisy, structured)
    ev = evaluate_classifier(ctx.classifiers[structured], feats, y_test)
    # same computation as reliability.stability, sharing the cached noisy inputs
    stab, stab_l2 = displacement_stats(encode(model, X_test, structured), feats)
    row: dict[str, Any] = {
        "variant": variant, "tau": tau, "p": p, "corruption_seed": corruption_seed,
        "accuracy": ev["accuracy"],
        "ece": ece(ev["probs"], y_test, ctx.cfg.ece_bins),
        "stability": stab,
        "stability_l2": stab_l2,
        "robustness": robustness(ctx.model_star if structured else ctx.base, model, X_noisy),
        "curve": None, "error": None,
    }
    curve = None
    if USES_UNCERTAINTY[variant]:
        sigma = ctx.base.Sigma_global
        z_true = ctx.data.Z_star[te]
        for a in ALPHAS:
            row[f"coverage_{a:g}"] = coverage_shared(z_true, feats, sigma, a).empirical
        scores = uncertainty_scores(feats, sigma, ctx.prototypes[structured])
        curve = risk_coverage_curve(scores, ev["pred"] == y_test)
        row["risk_at_50"] = curve.risk_at(0.5)
        row["risk_at_100"] = curve.risk_at(1.0)
        row["curve"] = "curves/" + curve_name(variant, tau, p)
    return row, curve


def grid_cells(cfg: SweepConfig) -> list[CellKey]:
    return [
        (v, float(t), float(p), s)
        for v in cfg.variants for t in cfg.tau_grid for p in cfg.p_grid
        for s in range(cfg.corruption_seeds)
    ]


def _error_row(key: CellKey, exc: Exception) -> dict:
    v, t, p, s = key
    msg = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
    return {"variant": v, "tau": t, "p": p, "corruption_seed": s, "error": msg}


def run_sweep(cfg: SweepConfig, cells: Iterable[CellKey] | None = None, data: SynthDataset | None = None) -> SweepResult:
    """Evaluate every grid cell; a failing cell is recorded with an error marker."""
    ctx = prepare(cfg, data)
    keys = list(cells) if cells is not None else grid_cells(cfg)

    def run_one(key: CellKey):
        try:
            return key, *evaluate_cell(ctx, *key)
        except Exception as exc:  # noqa: BLE001 - recorded per cell, sweep continues
            log.warning("cell %s failed: %s", key, exc)
            return key, _error_row(key, exc), None

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            outputs = list(pool.map(run_one, keys))
    else:
        outputs = [run_one(k) for k in keys]

    result = SweepResult(variant_order=cfg.variants)
    pending: dict[tuple[str, float, float], list[tuple[int, RiskCoverageCurve]]] = {}
    for key, row, curve in outputs:
        result.rows[key] = row
        if curve is not None:
            pending.setdefault(key[:3], []).append((key[3], curve))
    for ckey, items in pending.items():
        items.sort(key=lambda it: it[0])
        risks = np.mean([c.risk for _, c in items], axis=0)
        result.curves[ckey] = RiskCoverageCurve(items[0][1].coverage, risks)
    if cfg.out_dir:
        result.write(cfg.out_dir)
    return result
