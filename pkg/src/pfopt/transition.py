"""Covariance-ellipsoid transitional prior.

Each particle's most recent sigma points and their measured values form an
augmented ``(x, y)`` point cloud. The cloud's covariance ellipsoid decides how
far the particle moves toward the current estimate; Gaussian noise with
covariance ``Q`` is added to the move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SearchDomain, as_generator, psd_sqrt, regularized_inverse


@dataclass
class AugmentedCloud:
    xi: np.ndarray
    xi_bar: np.ndarray
    c_xy: np.ndarray

    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Principal variances (ascending) and axes of the ellipsoid."""
        return np.linalg.eigh(self.c_xy)


@dataclass
class TransitionParams:
    gamma: float
    Q: np.ndarray

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if np.any(np.linalg.eigvalsh(self.Q) < -1e-15):
            raise ValueError("Q must be positive semidefinite")


def cloud_covariance(points: np.ndarray, transformed: np.ndarray) -> np.ndarray:
    """Augmented covariance with divisor ``2n``; batched over leading axes.

    ``points`` has shape ``(..., 2n+1, n)``, ``transformed`` ``(..., 2n+1)``.
    """
    xi = np.concatenate([points, transformed[..., None]], axis=-1)
    centered = xi - xi.mean(axis=-2, keepdims=True)
    n = points.shape[-1]
    c = np.swapaxes(centered, -1, -2) @ centered / (2 * n)
    return 0.5 * (c + np.swapaxes(c, -1, -2))


def augmented_cloud(points: np.ndarray, transformed) -> AugmentedCloud:
    points = np.asarray(points, dtype=float)
    transformed = np.asarray(transformed, dtype=float)
    if points.shape[0] != transformed.shape[0]:
        raise ValueError("need one transformed value per sigma point")
    xi = np.column_stack([points, transformed])
    return AugmentedCloud(xi, xi.mean(axis=0), cloud_covariance(points, transformed))


def direction(x, y, x_hat_prev, y_hat_prev) -> np.ndarray:
    """Augmented direction ``[x_hat - x, y_hat - y]`` (broadcasts over particles)."""
    x = np.asarray(x, dtype=float)
    dx = np.asarray(x_hat_prev, dtype=float) - x
    dy = np.asarray(y_hat_prev, dtype=float) - np.asarray(y, dtype=float)
    return np.concatenate([dx, np.broadcast_to(dy, dx.shape[:-1])[..., None]], axis=-1)


def step_size(d, c_xy) -> np.ndarray | float:
    """Ellipsoid-limited step length.

    Inside the ellipsoid (``d' C^-1 d <= 1``) the full length ``|d|`` is
    returned; outside it is ``sqrt(d'd / d' C^-1 d)``, which equals
    ``sqrt(lambda_j)`` when ``d`` lies along eigenvector ``j``. A zero
    direction gives zero. Batched over leading axes of ``d``/``c_xy``.
    """
    d = np.asarray(d, dtype=float)
    cinv = regularized_inverse(c_xy)
    quad = np.einsum("...i,...ij,...j->...", d, cinv, d)
    dd = np.einsum("...i,...i->...", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        outside = np.sqrt(dd / quad)
    s = np.where(quad <= 1.0, np.sqrt(dd), outside)
    s = np.where(dd == 0.0, 0.0, s)
    return float(s) if s.ndim == 0 else s


def step_mean(x_prev, x_hat_prev, coef, gamma: float) -> np.ndarray:
    """``x + gamma * coef * (x_hat - x)`` with ``coef`` broadcast per particle."""
    x_prev = np.asarray(x_prev, dtype=float)
    coef = np.asarray(coef, dtype=float)
    if coef.ndim:
        coef = coef[..., None]
    return x_prev + gamma * coef * (np.asarray(x_hat_prev, dtype=float) - x_prev)


def propose(
    x_prev,
    x_hat_prev,
    s,
    params: TransitionParams,
    rng,
    domain: SearchDomain | None = None,
) -> np.ndarray:
    """Sample ``N(x + gamma * s * (x_hat - x), Q)``, clamped to ``domain``."""
    mean = step_mean(x_prev, x_hat_prev, s, params.gamma)
    out = mean + as_generator(rng).standard_normal(mean.shape) @ psd_sqrt(params.Q)
    return domain.clamp(out) if domain is not None else out


def particle_prior_cov(x_new, x_hat_prev, Q) -> np.ndarray:
    """``(x - x_hat)(x - x_hat)' + Q`` (batched over leading axes of ``x_new``)."""
    off = np.asarray(x_new, dtype=float) - np.asarray(x_hat_prev, dtype=float)
    return off[..., :, None] * off[..., None, :] + np.atleast_2d(Q)
