"""Downstream softmax classification, ECE, and risk-coverage selective prediction."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .encoders import DivergenceError
from .uncertainty import mahalanobis_sq_batch, spd_cholesky


class SelectiveError(ValueError):
    pass


@dataclass(frozen=True)
class SoftmaxHyper:
    lr: float = 2.0
    steps: int = 2000
    l2: float = 1e-4


@dataclass(frozen=True, eq=False)
class SoftmaxClassifier:
    V: np.ndarray
    c: np.ndarray
    variant: str = ""
    use_structure: bool = False
    loss_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n_classes(self) -> int:
        return self.V.shape[1]

    def logits(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.ndim != 2 or features.shape[1] != self.V.shape[0]:
            raise SelectiveError(f"expected {self.V.shape[0]} feature columns, got shape {features.shape}")
        return features @ self.V + self.c

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features))

    def predict(self, features: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.logits(features), axis=1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grad(X, Y, V, c, l2):
    logits = X @ V + c
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    n = X.shape[0]
    loss = float(np.mean(logsum - np.sum(z * Y, axis=1))) + 0.5 * l2 * float(np.sum(V * V))
    P = np.exp(z - logsum[:, None]) - Y
    return loss, X.T @ P / n + l2 * V, P.mean(axis=0)


def train_softmax(
    features: np.ndarray,
    labels: np.ndarray,
    hyper: SoftmaxHyper = SoftmaxHyper(),
    n_classes: int | None = None,
    variant: str = "",
    use_structure: bool = False,
) -> SoftmaxClassifier:
    """Multinomial logistic regression by full-batch gradient descent.

    Weights start at zero. Steps that increase the penalized cross-entropy are
    rejected and the learning rate halved, so the recorded loss never rises.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise SelectiveError("features must be n x d with one label per row")
    K = int(n_classes if n_classes is not None else y.max() + 1)
    if K < 2:
        raise SelectiveError("need at least two classes")
    if y.min() < 0 or y.max() >= K or not np.all(y == np.round(y)):
        raise SelectiveError("labels out of range")
    if X.shape[0] < K:
        raise SelectiveError("need at least one sample per class")
    Y = np.eye(K)[y.astype(np.int64)]
    V = np.zeros((X.shape[1], K))
    c = np.zeros(K)
    lr = hyper.lr
    loss, gV, gc = _loss_and_grad(X, Y, V, c, hyper.l2)
    history = [loss]
    for _ in range(hyper.steps):
        while True:
            V_new, c_new = V - lr * gV, c - lr * gc
            new_loss, new_gV, new_gc = _loss_and_grad(X, Y, V_new, c_new, hyper.l2)
            if not np.isfinite(new_loss):
                raise DivergenceError("softmax training diverged")
            if new_loss <= loss:
                break
            lr *= 0.5
            if lr < 1e-12:
                break
        if new_loss > loss:
            break
        V, c, loss, gV, gc = V_new, c_new, new_loss, new_gV, new_gc
        history.append(loss)
    return SoftmaxClassifier(V, c, variant, use_structure, tuple(history))


def evaluate_classifier(clf: SoftmaxClassifier, features: np.ndarray, labels: np.ndarray) -> dict:
    labels = np.asarray(labels)
    probs = clf.predict_proba(features)
    if labels.shape != (probs.shape[0],):
        raise SelectiveError("one label per row required")
    pred = np.argmax(probs, axis=1)
    return {"accuracy": float(np.mean(pred == labels)), "probs": probs, "pred": pred}


def ece(probs: np.ndarray, labels: np.ndarray, bins: int = 15) -> float:
    """Expected calibration error over equal-width confidence bins.

    Bin ``b`` holds confidences in ``(b/B, (b+1)/B]``; confidence 0 falls in
    the first bin. Empty bins contribute nothing.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if bins < 1:
        raise SelectiveError("bins must be a positive integer")
    if probs.ndim != 2 or labels.shape != (probs.shape[0],) or probs.shape[0] == 0:
        raise SelectiveError("probs must be n x K with n labels")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6) or np.any(probs < 0):
        raise SelectiveError("probability rows must be normalized")
    conf = probs.max(axis=1)
    correct = np.argmax(probs, axis=1) == labels
    idx = np.clip(np.ceil(conf * bins).astype(int) - 1, 0, bins - 1)
    n = probs.shape[0]
    total = 0.0
    for b in range(bins):
        mask = idx == b
        nb = int(mask.sum())
        if nb:
            total += nb / n * abs(correct[mask].mean() - conf[mask].mean())
    return float(total)


def class_prototypes(features: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    protos = np.zeros((n_classes, features.shape[1]))
    for k in range(n_classes):
        members = features[labels == k]
        if len(members) == 0:
            raise SelectiveError(f"class {k} has no training samples")
        protos[k] = members.mean(axis=0)
    return protos


def uncertainty_scores(mu: np.ndarray, sigma_global: np.ndarray, class_means: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance from each row of ``mu`` to its nearest prototype."""
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    chol = spd_cholesky(sigma_global)
    dists = np.stack([mahalanobis_sq_batch(mu, m, chol) for m in np.atleast_2d(class_means)], axis=1)
    return dists.min(axis=1)


def uncertainty_score(mu: np.ndarray, sigma_global: np.ndarray, class_means: np.ndarray) -> float:
    return float(uncertainty_scores(np.atleast_1d(mu)[None, :], sigma_global, class_means)[0])


@dataclass(frozen=True, eq=False)
class RiskCoverageCurve:
    coverage: np.ndarray
    risk: np.ndarray

    def __len__(self) -> int:
        return len(self.coverage)

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.coverage.tolist(), self.risk.tolist()))

    def risk_at(self, cov: float) -> float:
        """Selective risk at the smallest emitted coverage that reaches ``cov``."""
        k = int(np.searchsorted(self.coverage, cov - 1e-12))
        return float(self.risk[min(k, len(self.risk) - 1)])

    def to_csv(self) -> str:
        rows = ["coverage,risk"] + [f"{c:.9g},{r:.9g}" for c, r in self.points()]
        return "\n".join(rows) + "\n"


def risk_coverage_curve(scores: np.ndarray, correct: np.ndarray) -> RiskCoverageCurve:
    """Accept the ``k`` lowest-score points for ``k = 1..n``; risk is their error rate.

    Ties in score keep the original index order.
    """
    scores = np.asarray(scores, dtype=float)
    correct = np.asarray(correct, dtype=bool)
    if scores.shape != correct.shape or scores.ndim != 1:
        raise SelectiveError("scores and correctness flags must be equal-length vectors")
    n = scores.shape[0]
    if n == 0:
        raise SelectiveError("empty input")
    order = np.argsort(scores, kind="stable")
    errors = np.cumsum(~correct[order])
    k = np.arange(1, n + 1)
    return RiskCoverageCurve(k / n, errors / k)


def risk_coverage_from_risks(scores: np.ndarray, risks: np.ndarray) -> RiskCoverageCurve:
    """Curve built from known per-point risks instead of 0/1 errors."""
    scores = np.asarray(scores, dtype=float)
    risks = np.asarray(risks, dtype=float)
    if scores.shape != risks.shape or scores.ndim != 1 or scores.size == 0:
        raise SelectiveError("scores and risks must be equal-length nonempty vectors")
    order = np.argsort(scores, kind="stable")
    k = np.arange(1, scores.size + 1)
    return RiskCoverageCurve(k / scores.size, np.cumsum(risks[order]) / k)


def optimal_selective_risk(risks: np.ndarray, k: int, exhaustive: bool = True) -> float:
    """Smallest mean risk over all accepted subsets of size ``k``.

    With ``exhaustive=True`` every subset is enumerated (n <= 12); otherwise the
    bottom-k mean is returned.
    """
    risks = np.asarray(risks, dtype=float)
    n = risks.size
    if not 1 <= k <= n:
        raise SelectiveError(f"k={k} out of range for n={n}")
    if not exhaustive:
        return float(np.sort(risks)[:k].sum() / k)
    if n > 12:
        raise SelectiveError("exhaustive enumeration is limited to n <= 12")
    best = min(sum(sub) for sub in itertools.combinations(risks.tolist(), k))
    return float(best / k)
