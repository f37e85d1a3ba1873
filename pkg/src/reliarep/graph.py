"""Weighted undirected structure graphs and the Laplacian structure regularizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PSD_TOL = 1e-9


class GraphError(ValueError):
    """Raised for malformed graphs or graph/representation mismatches."""


@dataclass(frozen=True, eq=False)
class StructureGraph:
    """Undirected graph over ``n`` nodes with a symmetric nonnegative weight matrix.

    ``edges`` lists each undirected edge once as ``(i, j)`` with ``i < j``,
    sorted lexicographically.
    """

    n: int
    weights: np.ndarray = field(repr=False)
    edges: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float)
        if self.n < 1 or w.shape != (self.n, self.n):
            raise GraphError(f"weights must be {self.n}x{self.n}, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise GraphError("weights must be finite and nonnegative")
        if np.any(np.diag(w) != 0):
            raise GraphError("self-loops are not allowed")
        if not np.array_equal(w, w.T):
            raise GraphError("weight matrix must be exactly symmetric")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        iu, ju = np.nonzero(np.triu(w, k=1))
        object.__setattr__(self, "edges", tuple(zip(iu.tolist(), ju.tolist())))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StructureGraph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.weights, other.weights)

    def __hash__(self) -> int:
        return hash((self.n, self.weights.tobytes()))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def weighted_edges(self) -> list[tuple[int, int, float]]:
        return [(i, j, float(self.weights[i, j])) for i, j in self.edges]

    def to_edgelist(self) -> str:
        lines = [f"n={self.n}"]
        lines += [f"{i} {j} {w!r}" for i, j, w in self.weighted_edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist(cls, text: str) -> "StructureGraph":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("n="):
            raise GraphError("edge list must start with a 'n=<int>' header")
        n = int(lines[0][2:])
        edges = []
        for ln in lines[1:]:
            i, j, w = ln.split()
            edges.append((int(i), int(j), float(w)))
        return build_graph(n, edges)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_edgelist())

    @classmethod
    def load(cls, path: str | Path) -> "StructureGraph":
        return cls.from_edgelist(Path(path).read_text())


def build_graph(n: int, edges: Iterable[Sequence[float]]) -> StructureGraph:
    """Build a graph from ``(i, j, w)`` triples.

    Rejects out-of-range indices, self-loops, negative weights and any pair
    given twice (in either orientation).
    """
    if n < 1:
        raise GraphError("node count must be positive")
    w = np.zeros((n, n))
    seen: set[tuple[int, int]] = set()
    for e in edges:
        i, j, wij = int(e[0]), int(e[1]), float(e[2])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        if not np.isfinite(wij) or wij < 0:
            raise GraphError(f"negative or non-finite weight {wij} on edge ({i}, {j})")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
        w[i, j] = w[j, i] = wij
    return StructureGraph(n, w)


def path_graph(n: int, weight: float = 1.0) -> StructureGraph:
    return build_graph(n, [(i, i + 1, weight) for i in range(n - 1)])


def laplacian(g: StructureGraph) -> np.ndarray:
    """Unnormalized Laplacian ``D - W``."""
    w = g.weights
    return np.diag(w.sum(axis=1)) - w


def min_eigenvalue(mat: np.ndarray) -> float:
    sym = 0.5 * (mat + mat.T)
    return float(np.linalg.eigvalsh(sym)[0])


def _check_rows(Z: np.ndarray, g: StructureGraph) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.ndim != 2 or Z.shape[0] != g.n:
        raise GraphError(f"representation matrix has {Z.shape[0]} rows, graph has {g.n} nodes")
    return Z


def structure_regularizer(Z: np.ndarray, g: StructureGraph) -> float:
    """``tr(Z^T L Z)``, the weighted sum of squared row differences over edges."""
    Z = _check_rows(Z, g)
    val = float(np.einsum("ik,ik->", Z, laplacian(g) @ Z))
    # the quadratic form is PSD; round-off can push it a hair below zero
    return max(val, 0.0)


def structure_regularizer_pairs(Z: np.ndarray, g: StructureGraph) -> float:
    """Edge-wise form of the structure regularizer (explicit loop over ``g.edges``)."""
    Z = _check_rows(Z, g)
    total = 0.0
    for i, j in g.edges:
        diff = Z[i] - Z[j]
        total += g.weights[i, j] * float(diff @ diff)
    return total


def connected_components(g: StructureGraph) -> list[list[int]]:
    """Partition nodes into connected components (positive-weight edges only).

    Components are ordered by their smallest node; nodes within a component are
    sorted.
    """
    adj: list[list[int]] = [[] for _ in range(g.n)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    label = [-1] * g.n
    parts: list[list[int]] = []
    for start in range(g.n):
        if label[start] >= 0:
            continue
        label[start] = len(parts)
        stack, members = [start], []
        while stack:
            u = stack.pop()
            members.append(u)
            for v in adj[u]:
                if label[v] < 0:
                    label[v] = label[start]
                    stack.append(v)
        parts.append(sorted(members))
    return parts


def is_piecewise_constant(Z: np.ndarray, g: StructureGraph, atol: float = 0.0) -> bool:
    Z = _check_rows(Z, g)
    for part in connected_components(g):
        block = Z[part]
        if np.max(np.abs(block - block[0])) > atol:
            return False
    return True


def corrupt(g: StructureGraph, p: float, seed: int) -> StructureGraph:
    """Flip every node pair independently with probability ``p``.

    Existing edges are removed, absent pairs are added with weight 1.0. One
    uniform draw is consumed per unordered pair in ``(i, j)`` order, ``i < j``.
    """
    if not 0.0 <= p <= 1.0:
        raise GraphError(f"corruption probability must lie in [0, 1], got {p}")
    if p == 0.0:
        return g
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(g.n, k=1)
    flip = rng.random(iu.size) < p
    w = g.weights.copy()
    present = w[iu, ju] > 0
    new_vals = np.where(flip, np.where(present, 0.0, 1.0), w[iu, ju])
    w[iu, ju] = new_vals
    w[ju, iu] = new_vals
    return StructureGraph(g.n, w)
