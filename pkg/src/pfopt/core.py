"""Shared types, RNG streams, weight utilities and linear-algebra helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class AllWeightsZero(ValueError):
    """Every importance weight vanished (total particle degeneracy)."""


class NotPSD(np.linalg.LinAlgError):
    """Matrix could not be factorized even after jitter escalation."""


class SingularEllipsoid(np.linalg.LinAlgError):
    """Covariance ellipsoid stayed singular after regularization."""


class DimensionMismatch(ValueError):
    pass


# ----------------------------------------------------------------------
# Domain types
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SearchDomain:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DimensionMismatch("lower and upper must be 1-D and of equal length")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @classmethod
    def box(cls, lo: float, hi: float, dim: int = 1) -> "SearchDomain":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def sample_uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))


@dataclass
class Particle:
    """Single-particle view: position, weight, UT output moments, local covariance."""

    x: np.ndarray
    w: float
    y: float
    p_x: np.ndarray
    p_y: float


@dataclass
class Ensemble:
    """Particle population stored column-wise.

    Per-particle arrays carry a leading axis of length N. ``c_xy`` holds the
    augmented covariance ellipsoid of each particle's most recent unscented
    transform; it travels with the particle through resampling.
    """

    x: np.ndarray  # (N, n)
    w: np.ndarray  # (N,)
    y: np.ndarray  # (N,)
    p_x: np.ndarray  # (N, n, n)
    p_y: np.ndarray  # (N,)
    c_xy: np.ndarray  # (N, n+1, n+1)
    x_hat: np.ndarray
    y_hat: float
    p_xx: np.ndarray
    p_yy: float
    iteration: int = 0
    fes: int = 0
    y_ref: float = np.inf

    @property
    def n_particles(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def particles(self) -> list[Particle]:
        return [self.particle(i) for i in range(self.n_particles)]

    def particle(self, i: int) -> Particle:
        return Particle(
            x=self.x[i].copy(),
            w=float(self.w[i]),
            y=float(self.y[i]),
            p_x=self.p_x[i].copy(),
            p_y=float(self.p_y[i]),
        )

    def take(self, idx: np.ndarray) -> "Ensemble":
        """Copy of the ensemble with particles re-indexed by ``idx``; weights reset to uniform."""
        n = len(idx)
        return Ensemble(
            x=self.x[idx].copy(),
            w=np.full(n, 1.0 / n),
            y=self.y[idx].copy(),
            p_x=self.p_x[idx].copy(),
            p_y=self.p_y[idx].copy(),
            c_xy=self.c_xy[idx].copy(),
            x_hat=self.x_hat.copy(),
            y_hat=self.y_hat,
            p_xx=self.p_xx.copy(),
            p_yy=self.p_yy,
            iteration=self.iteration,
            fes=self.fes,
            y_ref=self.y_ref,
        )


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by the counter-based Philox bit generator, so the draw sequence
    depends only on the key, never on thread scheduling.
    """

    seed: int
    stream_id: int = 0
    _mask: int = field(default=(1 << 64) - 1, repr=False, compare=False)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed & self._mask, spawn_key=(self.stream_id & self._mask,)
        )
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, index: int) -> "RngStream":
        # interleave so distinct (stream_id, index) pairs never collide
        return RngStream(self.seed, ((self.stream_id + 1) << 20) + index)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


# ----------------------------------------------------------------------
# Weights
# ----------------------------------------------------------------------


def normalize_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0.0:
        raise AllWeightsZero("all weights are zero")
    return w / total


def normalize_log_weights(log_weights) -> np.ndarray:
    """Normalize weights given in log space using max subtraction.

    Entries equal to ``-inf`` (or NaN) map to zero weight. Raises
    :class:`AllWeightsZero` if no entry is finite.
    """
    lw = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(lw)
    if not np.any(finite):
        raise AllWeightsZero("all log weights are -inf")
    w = np.exp(np.where(finite, lw - np.max(lw[finite]), -np.inf))
    return w / w.sum()


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample_indices(weights, rng) -> np.ndarray:
    """Ancestor indices from systematic resampling with one uniform offset."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    u = as_generator(rng).uniform(0.0, 1.0 / n)
    positions = u + np.arange(n) / n
    cumulative = np.cumsum(w)
    cumulative[-1] = 1.0  # guard against round-off
    return np.searchsorted(cumulative, positions, side="right").clip(max=n - 1)


def systematic_resample(ensemble: Ensemble, rng) -> Ensemble:
    idx = systematic_resample_indices(ensemble.w, rng)
    return ensemble.take(idx)


# ----------------------------------------------------------------------
# Linear algebra
# ----------------------------------------------------------------------

_JITTER_START = 1e-12
_JITTER_STOP = 1e-6


def psd_sqrt(m) -> np.ndarray:
    """Upper-triangular ``L`` with ``L.T @ L == m``.

    Rows of ``L`` are the sigma-point offset vectors. Cholesky is tried
    first; on failure a diagonal jitter of ``1e-12 * trace(m) / n`` is
    added and escalated by 10x up to ``1e-6 * trace(m) / n``.

    Raises
    ------
    NotPSD
        If the factorization fails at the largest jitter.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim == 1 and m.size == 1:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.max(np.abs(m)), 1.0)
    if np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise NotPSD("matrix is not symmetric")
    if not np.any(m):
        return np.zeros_like(m)
    m = 0.5 * (m + m.T)
    try:
        return np.linalg.cholesky(m).T
    except np.linalg.LinAlgError:
        pass
    n = m.shape[0]
    base = np.trace(m) / n
    if base <= 0:
        raise NotPSD("matrix has nonpositive trace")
    eps = _JITTER_START
    while eps <= _JITTER_STOP * (1 + 1e-9):
        try:
            return np.linalg.cholesky(m + eps * base * np.eye(n)).T
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NotPSD("Cholesky failed after jitter escalation")


def batch_psd_sqrt(m: np.ndarray) -> np.ndarray:
    """:func:`psd_sqrt` over a stack of matrices with shape ``(..., n, n)``."""
    m = np.asarray(m, dtype=float)
    try:
        return np.swapaxes(np.linalg.cholesky(m), -1, -2)
    except np.linalg.LinAlgError:
        flat = m.reshape(-1, *m.shape[-2:])
        out = np.stack([psd_sqrt(a) for a in flat])
        return out.reshape(m.shape)


def regularized_inverse(c: np.ndarray, eps_start: float = 1e-10, eps_stop: float = 1e-4) -> np.ndarray:
    """Inverse of a stack of symmetric PSD matrices, with a ridge only where needed.

    Matrices that factor by Cholesky are inverted as they are. Otherwise
    ``eps * trace(c) / dim`` is added to the diagonal, starting at
    ``eps_start`` and escalating by 10x up to ``eps_stop``.

    Raises
    ------
    SingularEllipsoid
        If a matrix is still not positive definite at ``eps_stop``.
    """
    c = np.asarray(c, dtype=float)
    single = c.ndim == 2
    stack = c.reshape(-1, *c.shape[-2:])
    dim = stack.shape[-1]
    eye = np.eye(dim)
    base = np.trace(stack, axis1=-2, axis2=-1) / dim
    out = np.empty_like(stack)
    eps = np.zeros(stack.shape[0])
    pending = np.arange(stack.shape[0])
    while pending.size:
        if np.any(eps[pending] > eps_stop * (1 + 1e-9)):
            raise SingularEllipsoid("covariance stayed singular after regularization")
        reg = stack[pending] + (eps[pending] * base[pending])[:, None, None] * eye
        ok = np.ones(pending.size, dtype=bool)
        try:
            np.linalg.cholesky(reg)
            out[pending] = np.linalg.inv(reg)
        except np.linalg.LinAlgError:
            # per-matrix fallback: a tiny Cholesky pivot can still defeat the inverse
            for j, a in enumerate(reg):
                try:
                    np.linalg.cholesky(a)
                    out[pending[j]] = np.linalg.inv(a)
                except np.linalg.LinAlgError:
                    ok[j] = False
        failed = pending[~ok]
        eps[failed] = np.where(eps[failed] == 0.0, eps_start, 10.0 * eps[failed])
        pending = pending[~ok]
    return out[0] if single else out.reshape(c.shape)
