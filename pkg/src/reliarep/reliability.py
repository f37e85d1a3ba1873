"""Stability, coverage and structural robustness of fitted encoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bench import inject_noise
from .encoders import EncoderError, EncoderModel, encode
from .uncertainty import CoverageReport


@dataclass(frozen=True)
class ReliabilityReport:
    stability: float
    coverage: CoverageReport | None
    robustness: float
    tau: float
    p: float
    variant: str
    seed: int


def _displacement(model: EncoderModel, X: np.ndarray, tau: float, seed: int, use_structure: bool) -> np.ndarray:
    clean = encode(model, X, use_structure)
    noisy = encode(model, inject_noise(X, tau, seed), use_structure)
    return noisy - clean


def displacement_stats(clean: np.ndarray, noisy: np.ndarray) -> tuple[float, float]:
    """(mean squared, mean unsquared) row displacement between two representation sets."""
    diff = np.asarray(noisy) - np.asarray(clean)
    sq = np.sum(diff * diff, axis=1)
    return float(np.mean(sq)), float(np.mean(np.sqrt(sq)))


def stability(model: EncoderModel, X: np.ndarray, tau: float, seed: int, use_structure: bool = False) -> float:
    """Mean squared representation displacement under ``N(0, tau^2)`` input noise."""
    if tau == 0:
        return 0.0
    diff = _displacement(model, X, tau, seed, use_structure)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def stability_l2(model: EncoderModel, X: np.ndarray, tau: float, seed: int, use_structure: bool = False) -> float:
    """Unsquared variant: mean Euclidean displacement."""
    if tau == 0:
        return 0.0
    diff = _displacement(model, X, tau, seed, use_structure)
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def robustness(model_star: EncoderModel, model_prime: EncoderModel, X: np.ndarray) -> float:
    """Mean Euclidean distance between the representations two models give ``X``.

    Each model smooths with its own operator when it has one; two models
    without smoothing (the structure-agnostic variants) therefore score 0.
    """
    a = encode(model_star, X, use_structure=model_star.M_S is not None)
    b = encode(model_prime, X, use_structure=model_prime.M_S is not None)
    if a.shape != b.shape:
        raise EncoderError(f"representation shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))
