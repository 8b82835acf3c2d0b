"""Sigma-point construction and moment propagation through a noisy objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import batch_psd_sqrt, psd_sqrt
from .objective import NoisyObjective, eval_noisy


class BadScaling(ValueError):
    """``n + lambda`` must be positive."""


@dataclass
class SigmaSet:
    """``2n+1`` sigma points (rows) and their shared mean/covariance weights."""

    points: np.ndarray
    weights: np.ndarray
    lam: float

    @property
    def center(self) -> np.ndarray:
        return self.points[0]


@dataclass
class UtMoments:
    y_mean: float
    y_var: float
    transformed: np.ndarray


def ut_weights(n: int, lam: float) -> np.ndarray:
    if n + lam <= 0:
        raise BadScaling(f"n + lambda must be positive, got {n + lam}")
    w = np.full(2 * n + 1, 0.5 / (n + lam))
    w[0] = lam / (n + lam)
    return w


def sigma_points(center, P, lam: float) -> SigmaSet:
    """Sigma points ``center``, ``center + L[j]``, ``center - L[j]``.

    ``L`` is the upper Cholesky factor of ``(n + lam) P``, so its rows are
    the offsets.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = center.size
    weights = ut_weights(n, lam)
    L = psd_sqrt((n + lam) * np.atleast_2d(np.asarray(P, dtype=float)))
    points = np.vstack([center, center + L, center - L])
    return SigmaSet(points, weights, float(lam))


def batch_sigma_points(centers: np.ndarray, P: np.ndarray, lam: float) -> np.ndarray:
    """Sigma points for a stack of particles: ``(N, n)`` x ``(N, n, n)`` -> ``(N, 2n+1, n)``."""
    n = centers.shape[-1]
    ut_weights(n, lam)
    L = batch_psd_sqrt((n + lam) * P)
    c = centers[:, None, :]
    return np.concatenate([c, c + L, c - L], axis=1)


def moments(transformed: np.ndarray, weights: np.ndarray, R: float) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and variance (plus ``R``) over the last axis."""
    y_mean = transformed @ weights
    dev = transformed - y_mean[..., None]
    y_var = (dev * dev) @ weights + R
    return y_mean, y_var


def ut_propagate(s: SigmaSet, obj: NoisyObjective, R: float, rng) -> UtMoments:
    """Evaluate each sigma point once through the noisy objective (``2n+1`` evaluations)."""
    pts = obj.domain.clamp(s.points)
    transformed = np.asarray(eval_noisy(obj, pts, rng), dtype=float)
    y_mean, y_var = moments(transformed, s.weights, R)
    return UtMoments(float(y_mean), float(max(y_var, R)), transformed)
