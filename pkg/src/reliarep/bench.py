"""Controlled latent-variable benchmark.

Latents come from a Gaussian mixture whose shared covariance is block
structured over feature groups; observations are a frozen random two-layer
tanh network of the latents plus Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import StructureGraph, path_graph

# Independent random streams per dataset; stream order is fixed.
_STREAM_GENERATOR = 0
_STREAM_LABELS = 1
_STREAM_LATENTS = 2
_STREAM_OBS_NOISE = 3


class BenchError(ValueError):
    pass


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Deterministic generator for a named sub-stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


@dataclass(frozen=True)
class BenchConfig:
    d: int = 16
    G: int = 4
    K: int = 4
    n_train: int = 2000
    n_test: int = 2000
    pi: tuple[float, ...] | None = None
    component_sep: float = 3.0
    rho_w: float = 0.6
    rho_b: float = 0.3
    sigma_obs: float = 0.1
    gen_width: int = 32
    m: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pi is None:
            object.__setattr__(self, "pi", tuple([1.0 / self.K] * self.K))
        else:
            object.__setattr__(self, "pi", tuple(float(x) for x in self.pi))
        self.validate()

    def validate(self) -> None:
        for name in ("d", "G", "K", "n_train", "n_test", "gen_width", "m"):
            if int(getattr(self, name)) < 1:
                raise BenchError(f"{name} must be a positive integer")
        if self.d % self.G:
            raise BenchError(f"d={self.d} is not divisible by G={self.G}")
        if self.K > self.d:
            raise BenchError("mixture means live on the first K latent axes, so K <= d")
        if len(self.pi) != self.K or any(x < 0 for x in self.pi):
            raise BenchError("pi must be K nonnegative weights")
        if abs(sum(self.pi) - 1.0) > 1e-12:
            raise BenchError(f"pi sums to {sum(self.pi)!r}, expected 1")
        if not (0 <= self.rho_w < 1 and 0 <= self.rho_b < 1):
            raise BenchError("correlations must lie in [0, 1)")
        if self.sigma_obs < 0:
            raise BenchError("sigma_obs must be nonnegative")

    @property
    def n(self) -> int:
        return self.n_train + self.n_test

    def dim_groups(self) -> list[list[int]]:
        size = self.d // self.G
        return [list(range(g * size, (g + 1) * size)) for g in range(self.G)]

    def component_means(self) -> np.ndarray:
        means = np.zeros((self.K, self.d))
        means[np.arange(self.K), np.arange(self.K)] = self.component_sep
        return means

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pi"] = list(self.pi)
        return out


def build_block_covariance(
    groups: list[list[int]], group_graph: StructureGraph, rho_w: float, rho_b: float
) -> np.ndarray:
    """Unit-diagonal covariance with ``rho_w`` inside groups and ``rho_b`` between adjacent groups."""
    d = sum(len(g) for g in groups)
    owner = np.full(d, -1)
    for gi, dims in enumerate(groups):
        for a in dims:
            if not 0 <= a < d or owner[a] >= 0:
                raise BenchError("groups must partition range(d)")
            owner[a] = gi
    if len(groups) != group_graph.n:
        raise BenchError(f"{len(groups)} groups but group graph has {group_graph.n} nodes")
    same = owner[:, None] == owner[None, :]
    adjacent = group_graph.weights[owner[:, None], owner[None, :]] > 0
    cov = np.where(same, rho_w, np.where(adjacent, rho_b, 0.0))
    np.fill_diagonal(cov, 1.0)
    lam_min = float(np.linalg.eigvalsh(cov)[0])
    if lam_min <= 0:
        raise BenchError(
            f"block covariance is not SPD (min eigenvalue {lam_min:.3e}); lower rho_w={rho_w} or rho_b={rho_b}"
        )
    return cov


@dataclass(frozen=True, eq=False)
class Generator:
    """Frozen two-layer network ``x = W2 tanh(W1 z + b1) + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def random(cls, d: int, width: int, m: int, rng: np.random.Generator) -> "Generator":
        W1 = rng.standard_normal((width, d)) / np.sqrt(d)
        W2 = rng.standard_normal((m, width)) / np.sqrt(width)
        return cls(W1, np.zeros(width), W2, np.zeros(m))

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        H = np.tanh(Z @ self.W1.T + self.b1)
        return H @ self.W2.T + self.b2

    def lipschitz_bound(self) -> float:
        # tanh is 1-Lipschitz, so the product of spectral norms bounds the map
        return float(np.linalg.norm(self.W1, 2) * np.linalg.norm(self.W2, 2))


@dataclass(frozen=True, eq=False)
class SynthDataset:
    Z_star: np.ndarray
    labels: np.ndarray
    X: np.ndarray
    group_graph: StructureGraph
    config: BenchConfig
    generator: Generator = field(repr=False)
    sigma_star: np.ndarray = field(repr=False)

    @property
    def train(self) -> slice:
        return slice(0, self.config.n_train)

    @property
    def test(self) -> slice:
        return slice(self.config.n_train, self.config.n)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SynthDataset):
            return NotImplemented
        return (
            self.config == other.config
            and self.group_graph == other.group_graph
            and np.array_equal(self.Z_star, other.Z_star)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.X, other.X)
        )

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_matrix(out / "Z_star.csv", self.Z_star)
        _write_matrix(out / "X.csv", self.X)
        (out / "labels.csv").write_text("".join(f"{int(c)}\n" for c in self.labels))
        sidecar = {"config": self.config.to_dict(), "group_graph": self.group_graph.to_edgelist()}
        (out / "dataset.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, in_dir: str | Path) -> "SynthDataset":
        src = Path(in_dir)
        meta = json.loads((src / "dataset.json").read_text())
        cfg = BenchConfig(**meta["config"])
        # generator and covariance are functions of the config, so rebuild them
        ref = make_dataset(cfg, group_graph=StructureGraph.from_edgelist(meta["group_graph"]), sample=False)
        labels_txt = (src / "labels.csv").read_text().split()
        return cls(
            Z_star=_read_matrix(src / "Z_star.csv", cfg.d),
            labels=np.array([int(v) for v in labels_txt], dtype=np.int64),
            X=_read_matrix(src / "X.csv", cfg.m),
            group_graph=ref.group_graph,
            config=cfg,
            generator=ref.generator,
            sigma_star=ref.sigma_star,
        )


def _write_matrix(path: Path, A: np.ndarray) -> None:
    # 17 significant digits round-trip every double exactly
    np.savetxt(path, np.atleast_2d(A), fmt="%.17g", delimiter=",")


def _read_matrix(path: Path, ncols: int) -> np.ndarray:
    A = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    return A.reshape(-1, ncols)


def make_dataset(
    cfg: BenchConfig, group_graph: StructureGraph | None = None, sample: bool = True
) -> SynthDataset:
    """Draw a benchmark dataset; deterministic in ``cfg.seed``.

    The first ``n_train`` rows form the training split, the rest the test split.
    """
    cfg.validate()
    if group_graph is None:
        group_graph = path_graph(cfg.G)
    sigma_star = build_block_covariance(cfg.dim_groups(), group_graph, cfg.rho_w, cfg.rho_b)
    gen = Generator.random(cfg.d, cfg.gen_width, cfg.m, rng_for(cfg.seed, _STREAM_GENERATOR))
    if not sample:
        empty = np.empty((0, cfg.d))
        return SynthDataset(empty, np.empty(0, dtype=np.int64), np.empty((0, cfg.m)), group_graph, cfg, gen, sigma_star)

    labels = rng_for(cfg.seed, _STREAM_LABELS).choice(cfg.K, size=cfg.n, p=np.asarray(cfg.pi))
    chol = np.linalg.cholesky(sigma_star)
    eps = rng_for(cfg.seed, _STREAM_LATENTS).standard_normal((cfg.n, cfg.d))
    Z_star = cfg.component_means()[labels] + eps @ chol.T
    X = gen(Z_star)
    if cfg.sigma_obs > 0:
        X = X + cfg.sigma_obs * rng_for(cfg.seed, _STREAM_OBS_NOISE).standard_normal(X.shape)
    return SynthDataset(Z_star, labels.astype(np.int64), X, group_graph, cfg, gen, sigma_star)


def inject_noise(X: np.ndarray, tau: float, seed: int) -> np.ndarray:
    """Add i.i.d. ``N(0, tau^2)`` noise to every entry.

    For a fixed seed the perturbation is ``tau`` times the same standard normal
    draw, so results at different ``tau`` are paired.
    """
    if tau < 0:
        raise BenchError(f"noise level must be nonnegative, got {tau}")
    X = np.asarray(X, dtype=float)
    if tau == 0:
        return X.copy()
    return X + tau * np.random.default_rng(seed).standard_normal(X.shape)
