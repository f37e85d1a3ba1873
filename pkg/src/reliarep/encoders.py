"""Ridge base encoder, structure smoothing, and the representation-level objective."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import StructureGraph, build_graph, laplacian, structure_regularizer
from .uncertainty import (
    GaussianRepr,
    spd_cholesky,
    structural_uncertainty_regularizer,
    uncertainty_regularizer,
)

log = logging.getLogger(__name__)


class EncoderError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class EncoderModel:
    W: np.ndarray
    b: np.ndarray
    x_mean: np.ndarray
    Sigma_global: np.ndarray
    lambda_ridge: float
    M_S: np.ndarray | None = None
    gamma: float | None = None

    def with_structure(self, M_S: np.ndarray, gamma: float | None = None) -> "EncoderModel":
        """Same ridge stage, different smoothing operator."""
        return replace(self, M_S=np.asarray(M_S, dtype=float), gamma=gamma)

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        arrays = {"W": self.W, "b": self.b, "x_mean": self.x_mean, "Sigma_global": self.Sigma_global}
        if self.M_S is not None:
            arrays["M_S"] = self.M_S
        for name, arr in arrays.items():
            np.savetxt(out / f"{name}.csv", np.atleast_2d(arr), fmt="%.17g", delimiter=",")
        meta = {
            "lambda_ridge": self.lambda_ridge,
            "gamma": self.gamma,
            "shapes": {k: list(np.shape(v)) for k, v in arrays.items()},
        }
        (out / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, in_dir: str | Path) -> "EncoderModel":
        src = Path(in_dir)
        meta = json.loads((src / "model.json").read_text())
        arrays = {
            k: np.loadtxt(src / f"{k}.csv", delimiter=",", ndmin=2).reshape(shape)
            for k, shape in meta["shapes"].items()
        }
        return cls(
            W=arrays["W"],
            b=arrays["b"],
            x_mean=arrays["x_mean"],
            Sigma_global=arrays["Sigma_global"],
            lambda_ridge=meta["lambda_ridge"],
            M_S=arrays.get("M_S"),
            gamma=meta["gamma"],
        )


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_uncertainty: float = 0.0
    lambda_structure: float = 0.0
    task_weight: float = 1.0

    def __post_init__(self) -> None:
        if min(self.lambda_uncertainty, self.lambda_structure, self.task_weight) < 0:
            raise EncoderError("objective weights must be nonnegative")


@dataclass(frozen=True, eq=False)
class LinearHead:
    """Frozen softmax head: logits = Z @ V + c."""

    V: np.ndarray
    c: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.c is None:
            object.__setattr__(self, "c", np.zeros(self.V.shape[1]))


# --- ridge -----------------------------------------------------------------------


def fit_ridge_encoder(X: np.ndarray, targets: np.ndarray, lambda_ridge: float) -> EncoderModel:
    """Ridge regression of ``targets`` on centered ``X``.

    ``Sigma_global`` is the covariance of the training residuals, shrunk by
    ``1e-6 * tr / d`` (at least ``1e-9``) along the diagonal so it is always SPD.
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(targets, dtype=float)
    if X.ndim != 2 or T.ndim != 2 or X.shape[0] != T.shape[0] or X.shape[0] == 0:
        raise EncoderError(f"incompatible shapes X{X.shape} targets{T.shape}")
    if not lambda_ridge > 0:
        raise EncoderError("lambda_ridge must be positive")
    x_mean = X.mean(axis=0)
    t_mean = T.mean(axis=0)
    Xc = X - x_mean
    Tc = T - t_mean
    A = Xc.T @ Xc + lambda_ridge * np.eye(X.shape[1])
    W = np.linalg.solve(A, Xc.T @ Tc)
    resid = Tc - Xc @ W
    d = T.shape[1]
    cov = resid.T @ resid / max(X.shape[0] - 1, 1)
    cov = 0.5 * (cov + cov.T)
    # absolute floor keeps exact (residual-free) fits SPD
    shrink = max(1e-6 * np.trace(cov) / d, 1e-9)
    cov = cov + shrink * np.eye(d)
    spd_cholesky(cov)
    return EncoderModel(W=W, b=t_mean, x_mean=x_mean, Sigma_global=cov, lambda_ridge=float(lambda_ridge))


# --- structure smoothing -------------------------------------------------------


def lift_group_graph(group_graph: StructureGraph, dim_groups: Sequence[Sequence[int]]) -> StructureGraph:
    """Dimension-level graph: dims ``a``, ``b`` joined with ``w_gh`` when their groups are."""
    d = sum(len(g) for g in dim_groups)
    if len(dim_groups) != group_graph.n:
        raise EncoderError(f"{len(dim_groups)} groups but group graph has {group_graph.n} nodes")
    owner = np.full(d, -1)
    for gi, dims in enumerate(dim_groups):
        for a in dims:
            if not 0 <= a < d or owner[a] >= 0:
                raise EncoderError("dim_groups must partition range(d)")
            owner[a] = gi
    edges = []
    for g, h in group_graph.edges:
        w = group_graph.weights[g, h]
        edges += [(a, b, w) for a in dim_groups[g] for b in dim_groups[h]]
    return build_graph(d, edges)


def smoothing_operator(
    group_graph: StructureGraph, dim_groups: Sequence[Sequence[int]], gamma: float = 1.0
) -> np.ndarray:
    """Graph filter ``(I + gamma * L_exp)^{-1}`` on the dimension-lifted Laplacian."""
    if gamma < 0:
        raise EncoderError("gamma must be nonnegative")
    L = laplacian(lift_group_graph(group_graph, dim_groups))
    A = np.eye(L.shape[0]) + gamma * L
    try:
        M = np.linalg.solve(A, np.eye(L.shape[0]))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - I + PSD is never singular
        raise EncoderError("smoothing system is singular") from exc
    return 0.5 * (M + M.T)


def encode(model: EncoderModel, X: np.ndarray, use_structure: bool = False) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.W.shape[0]:
        raise EncoderError(f"expected inputs with {model.W.shape[0]} columns, got {X.shape}")
    mu = (X - model.x_mean) @ model.W + model.b
    if use_structure:
        if model.M_S is None:
            raise EncoderError("structure-aware encoding requested but the model has no smoothing operator")
        mu = mu @ model.M_S.T
    return mu


def spectral_norm(A: np.ndarray, tol: float = 1e-8, max_iter: int = 100_000) -> float:
    """Largest singular value by power iteration on ``A^T A``."""
    A = np.asarray(A, dtype=float)
    AtA = A.T @ A
    if not np.any(AtA):
        return 0.0
    # deterministic start with a component along every axis
    v = np.ones(AtA.shape[0]) + np.linspace(0.0, 0.5, AtA.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = AtA @ v
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            break
        v = w / nrm
        # squared estimates converge twice as fast as the singular vector
        if abs(new - est) <= max(tol * tol, 4e-16) * abs(new):
            est = new
            break
        est = new
    # one last Rayleigh quotient on the converged direction
    est = max(est, float(v @ AtA @ v))
    return float(np.sqrt(est))


def lipschitz_bound(model: EncoderModel, with_structure: bool = False) -> float:
    L = spectral_norm(model.W)
    if with_structure:
        if model.M_S is None:
            raise EncoderError("model has no smoothing operator")
        L *= spectral_norm(model.M_S)
    return L


# --- unified objective -----------------------------------------------------------


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _task_loss_grad(Z: np.ndarray, labels: np.ndarray, head: LinearHead) -> tuple[float, np.ndarray]:
    logits = Z @ head.V + head.c
    shifted = logits - logits.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(shifted).sum(axis=1))
    n = Z.shape[0]
    loss = float(np.mean(logZ - shifted[np.arange(n), labels]))
    P = np.exp(shifted - logZ[:, None])
    P[np.arange(n), labels] -= 1.0
    return loss, (P @ head.V.T) / n


def _check_objective_inputs(Z, sigmas, labels, g):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != g.n:
        raise EncoderError(f"means have shape {Z.shape}, graph has {g.n} nodes")
    if len(sigmas) != Z.shape[0]:
        raise EncoderError(f"{len(sigmas)} covariances for {Z.shape[0]} means")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (Z.shape[0],):
        raise EncoderError("one label per representation required")
    return Z, labels


def unified_objective(
    Z_means: np.ndarray,
    sigmas: Sequence[np.ndarray],
    labels: np.ndarray,
    g: StructureGraph,
    wts: ObjectiveWeights,
    phi_mode: str = "trace",
    head: LinearHead | None = None,
) -> float:
    """Task cross-entropy plus weighted uncertainty and structural-uncertainty terms.

    ``head`` is a frozen linear softmax head; with ``head=None`` or
    ``task_weight=0`` the task term is dropped.
    """
    Z, labels = _check_objective_inputs(Z_means, sigmas, labels, g)
    total = 0.0
    if head is not None and wts.task_weight > 0:
        total += wts.task_weight * _task_loss_grad(Z, labels, head)[0]
    if wts.lambda_uncertainty > 0 or wts.lambda_structure > 0:
        reprs = [GaussianRepr(mu, s) for mu, s in zip(Z, sigmas)]
        if wts.lambda_uncertainty > 0:
            total += wts.lambda_uncertainty * uncertainty_regularizer(reprs, phi_mode)
        if wts.lambda_structure > 0:
            total += wts.lambda_structure * structural_uncertainty_regularizer(reprs, g)
    return total


def unified_objective_grad(
    Z_means: np.ndarray,
    sigmas: Sequence[np.ndarray],
    labels: np.ndarray,
    g: StructureGraph,
    wts: ObjectiveWeights,
    head: LinearHead | None = None,
) -> np.ndarray:
    """Gradient of :func:`unified_objective` with respect to the means.

    The uncertainty terms depend only on the covariances, so they contribute
    nothing here; the structural term contributes ``2 * lambda * L @ Z``.
    """
    Z, labels = _check_objective_inputs(Z_means, sigmas, labels, g)
    grad = np.zeros_like(Z)
    if head is not None and wts.task_weight > 0:
        grad += wts.task_weight * _task_loss_grad(Z, labels, head)[1]
    if wts.lambda_structure > 0:
        grad += 2.0 * wts.lambda_structure * (laplacian(g) @ Z)
    return grad


def train_representations(
    Z_init: np.ndarray,
    sigmas: Sequence[np.ndarray],
    labels: np.ndarray,
    g: StructureGraph,
    wts: ObjectiveWeights,
    steps: int = 5000,
    lr: float = 0.1,
    head: LinearHead | None = None,
    phi_mode: str = "trace",
    rtol: float = 1e-10,
) -> np.ndarray:
    """Gradient descent on the means with backtracking.

    A step that raises the objective is rejected and the learning rate halved.
    Stops when the relative objective change drops below ``rtol``.
    """
    if lr <= 0 or steps < 1:
        raise EncoderError("need lr > 0 and steps >= 1")
    Z = np.array(Z_init, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    # covariance-only terms are constant while the means move
    const = unified_objective(Z, sigmas, labels, g, replace(wts, task_weight=0.0), phi_mode)
    const -= wts.lambda_structure * structure_regularizer(Z, g)
    L = laplacian(g)
    use_task = head is not None and wts.task_weight > 0

    def objective(M: np.ndarray) -> float:
        val = const + wts.lambda_structure * float(np.einsum("ik,ik->", M, L @ M))
        if use_task:
            val += wts.task_weight * _task_loss_grad(M, labels, head)[0]
        return val

    obj = objective(Z)
    for _ in range(steps):
        grad = unified_objective_grad(Z, sigmas, labels, g, wts, head)
        if not np.any(grad):
            break
        while True:
            cand = Z - lr * grad
            cand_obj = objective(cand)
            if not np.isfinite(cand_obj):
                raise DivergenceError("objective became non-finite")
            if cand_obj <= obj:
                break
            lr *= 0.5
            if lr < 1e-300:
                return Z
        change = obj - cand_obj
        Z, prev, obj = cand, obj, cand_obj
        if change <= rtol * abs(prev - const):
            break
    return Z


def structure_energy_lifted(mu: np.ndarray, lifted: StructureGraph) -> float:
    """Structural energy of each representation over the lifted dimension graph, summed."""
    return structure_regularizer(np.asarray(mu).T, lifted)
