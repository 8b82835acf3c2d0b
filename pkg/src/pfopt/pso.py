"""Reference particle swarm optimizer with nearest-neighbour influence.

Used as the comparison baseline for PFO. Personal and global bests compare raw
(possibly noisy) objective values, so on noisy problems the swarm chases lucky
measurements. That failure mode is kept on purpose.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core import RngStream
from .objective import NoisyObjective, eval_noisy
from .pfo import RunTrace, TraceRecord

STREAM_INIT, STREAM_VELOCITY, STREAM_MEASURE = 0, 1, 2


@dataclass
class PsoConfig:
    n_particles: int = 150
    sigma_nn: int = 5
    v_max: float = 2.26
    phi_p_max: float = 0.37
    phi_n_max: float = 3.68
    phi_g_max: float = 7.4
    w_max: float = 0.9
    w_min: float = 0.25
    k_max: int = 100
    seed: int = 0
    target_error: Optional[float] = None

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if not 1 <= self.sigma_nn < self.n_particles:
            raise ValueError("sigma_nn must satisfy 1 <= sigma_nn < n_particles")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")
        if not self.w_max >= self.w_min >= 0:
            raise ValueError("need w_max >= w_min >= 0")
        if min(self.phi_p_max, self.phi_n_max, self.phi_g_max) < 0:
            raise ValueError("influence caps must be nonnegative")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")

    def as_dict(self) -> dict:
        return asdict(self)


def inertia(k: int, config: PsoConfig) -> float:
    """Linear decay from ``w_max`` at ``k = 1`` to ``w_min`` at ``k = k_max``."""
    if config.k_max == 1:
        return config.w_max
    frac = (k - 1) / (config.k_max - 1)
    return config.w_max - (config.w_max - config.w_min) * frac


def nearest_neighbors(x: np.ndarray, sigma: int) -> np.ndarray:
    """Indices ``(N, sigma)`` of each row's nearest other rows (exhaustive scan, stable ties)."""
    diff = x[:, None, :] - x[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :sigma]


def neighborhood_best(x: np.ndarray, fx: np.ndarray, sigma: int) -> np.ndarray:
    """Position of the lowest-valued neighbour of each particle."""
    nn = nearest_neighbors(x, sigma)
    pick = nn[np.arange(x.shape[0]), np.argmin(fx[nn], axis=1)]
    return x[pick]


def _spread(x: np.ndarray) -> np.ndarray:
    c = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    return 0.5 * (c + c.T)


def pso_run(config: PsoConfig, obj: NoisyObjective) -> RunTrace:
    """Run the swarm for ``k_max`` iterations or until the target error is met.

    Trace records carry the global best as ``x_hat``/``y_hat`` and the swarm
    position scatter as ``p_xx``. Every particle costs one evaluation per
    iteration, plus one each at initialization.
    """
    obj = obj.minimization_view()
    if config.target_error is not None and obj.known_optimum is None:
        raise ValueError("target_error needs an objective with a known optimum")
    n_part, n = config.n_particles, obj.dim
    init = RngStream(config.seed, STREAM_INIT).generator()
    vel_rng = RngStream(config.seed, STREAM_VELOCITY).generator()
    meas = RngStream(config.seed, STREAM_MEASURE).generator()

    x = obj.domain.sample_uniform(init, n_part)
    v = init.uniform(-config.v_max, config.v_max, size=(n_part, n))
    fx = np.asarray(eval_noisy(obj, x, meas), dtype=float)
    b, fb = x.copy(), fx.copy()
    gi = int(np.argmin(fb))
    g, fg = b[gi].copy(), float(fb[gi])
    fes = n_part

    trace = RunTrace(reason="k_max")
    for k in range(1, config.k_max + 1):
        h = neighborhood_best(x, fx, config.sigma_nn)
        phi_p = vel_rng.uniform(0.0, config.phi_p_max, size=(n_part, n))
        phi_n = vel_rng.uniform(0.0, config.phi_n_max, size=(n_part, n))
        phi_g = vel_rng.uniform(0.0, config.phi_g_max, size=(n_part, n))
        v = inertia(k, config) * v + phi_p * (b - x) + phi_n * (h - x) + phi_g * (g - x)
        v = np.clip(v, -config.v_max, config.v_max)
        x = obj.domain.clamp(x + v)
        fx = np.asarray(eval_noisy(obj, x, meas), dtype=float)
        fes += n_part
        better = fx < fb
        b[better], fb[better] = x[better], fx[better]
        gi = int(np.argmin(fb))
        if fb[gi] < fg:
            g, fg = b[gi].copy(), float(fb[gi])
        trace.records.append(
            TraceRecord(k=k, x_hat=g.copy(), y_hat=fg, p_xx=_spread(x), p_yy=float(np.var(fx)),
                        ess=float(n_part), fes=fes)
        )
        if config.target_error is not None and abs(fg - obj.known_optimum[1]) < config.target_error:
            trace.reason = "target"
            break
    trace.best_x, trace.best_y = g.copy(), fg
    return trace
