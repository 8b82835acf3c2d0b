"""Particle filter-based optimization with unscented moment propagation.

Each iteration moves every particle toward the current estimate by an
ellipsoid-limited step plus Gaussian exploration noise, measures the objective
at the particle's sigma points, and reweights particles by the Gaussian
likelihood of their UT mean under the best value observed so far.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .core import (
    AllWeightsZero,
    Ensemble,
    RngStream,
    SingularEllipsoid,
    effective_sample_size,
    normalize_log_weights,
    regularized_inverse,
    systematic_resample,
)
from .objective import NoisyObjective, eval_noisy
from .transition import (
    TransitionParams,
    cloud_covariance,
    direction,
    particle_prior_cov,
    propose,
    step_size,
)
from .unscented import batch_sigma_points, moments, ut_weights

log = logging.getLogger(__name__)

STEP_RULES = ("x-length", "length", "literal")

# stream ids inside one trial seed
STREAM_INIT, STREAM_PROPOSE, STREAM_MEASURE, STREAM_RESAMPLE = 0, 1, 2, 3


def as_matrix(q, dim: int) -> np.ndarray:
    """Scalar -> ``q I``; vector -> ``diag(q)``; matrix unchanged."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        return float(q) * np.eye(dim)
    if q.ndim == 1:
        if q.size == 1:
            return float(q[0]) * np.eye(dim)
        return np.diag(q)
    return q


@dataclass
class PfoConfig:
    n_particles: int = 50
    k_max: int = 100
    n_thr: Optional[float] = None  # None -> n_particles / 2
    lam: float = 1.0
    gamma: float = 1.0
    Q: object = 1e-8
    R: float = 0.5
    sigma_x: float = 1e-5
    sigma_y: float = 1e-5
    estimate_mode: str = "mmse"
    resample: bool = True
    seed: int = 0
    stop_rule: str = "or"
    step_rule: str = "x-length"
    likelihood_var: str = "ut"
    target_error: Optional[float] = None

    def __post_init__(self):
        if self.n_thr is None:
            self.n_thr = self.n_particles / 2
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if not 0 < self.n_thr <= self.n_particles:
            raise ValueError("n_thr must lie in (0, n_particles]")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("convergence thresholds must be positive")
        if self.R < 0:
            raise ValueError("R must be nonnegative")
        if self.estimate_mode not in ("mmse", "map"):
            raise ValueError("estimate_mode must be 'mmse' or 'map'")
        if self.stop_rule not in ("or", "and"):
            raise ValueError("stop_rule must be 'or' or 'and'")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if self.likelihood_var not in ("noise", "ut"):
            raise ValueError("likelihood_var must be 'noise' or 'ut'")

    def Q_matrix(self, dim: int) -> np.ndarray:
        return as_matrix(self.Q, dim)

    def as_dict(self) -> dict:
        d = asdict(self)
        q = np.asarray(self.Q, dtype=float)
        d["Q"] = float(q) if q.ndim == 0 else q.tolist()
        return d


@dataclass
class TraceRecord:
    k: int
    x_hat: np.ndarray
    y_hat: float
    p_xx: np.ndarray
    p_yy: float
    ess: float
    fes: int
    resampled: bool = False


@dataclass
class RunTrace:
    records: list[TraceRecord] = field(default_factory=list)
    reason: str = ""
    best_x: Optional[np.ndarray] = None
    best_y: Optional[float] = None
    ensembles: list = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


@dataclass
class CredibleRegion:
    center: np.ndarray
    shape: np.ndarray
    level: float
    radius2: float

    def mahalanobis2(self, x) -> np.ndarray:
        diff = np.asarray(x, dtype=float) - self.center
        inv = regularized_inverse(self.shape)
        return np.einsum("...i,ij,...j->...", diff, inv, diff)

    def contains(self, x) -> np.ndarray:
        return self.mahalanobis2(x) <= self.radius2


# ----------------------------------------------------------------------
# Building blocks
# ----------------------------------------------------------------------


def gaussian_logpdf(y, mean, var) -> np.ndarray:
    var = np.maximum(np.asarray(var, dtype=float), 1e-300)
    r = np.asarray(y, dtype=float) - mean
    return -0.5 * (np.log(2.0 * np.pi * var) + r * r / var)


def weight_update(y, p_y, y_ref: float, w_prev) -> np.ndarray:
    """Multiply prior weights by ``N(y_i; y_ref, p_y_i)`` and normalize (in log space).

    Raises :class:`AllWeightsZero` if every updated weight underflows.
    """
    with np.errstate(divide="ignore"):
        log_w = np.log(np.asarray(w_prev, dtype=float))
    return normalize_log_weights(log_w + gaussian_logpdf(y, y_ref, p_y))


def estimate(ensemble: Ensemble, mode: str = "mmse") -> tuple[np.ndarray, float]:
    """MMSE (weighted mean) or MAP (heaviest particle) estimate.

    MAP ties are broken by the lower UT mean, then by the lower index.
    """
    w, x, y = ensemble.w, ensemble.x, ensemble.y
    if mode == "mmse":
        return w @ x, float(w @ y)
    if mode == "map":
        order = np.lexsort((np.arange(w.size), y, -w))
        i = order[0]
        return x[i].copy(), float(y[i])
    raise ValueError(f"unknown estimate mode {mode!r}")


def empirical_covariances(ensemble: Ensemble) -> tuple[np.ndarray, float]:
    """Weighted scatter of positions and UT means about their MMSE estimates."""
    w = ensemble.w
    x_bar, y_bar = w @ ensemble.x, w @ ensemble.y
    dx = ensemble.x - x_bar
    dy = ensemble.y - y_bar
    p_xx = (w[:, None] * dx).T @ dx
    return 0.5 * (p_xx + p_xx.T), float(w @ (dy * dy))


def converged(ensemble: Ensemble, config: PfoConfig) -> bool:
    x_ok = np.linalg.norm(ensemble.p_xx, 2) < config.sigma_x
    y_ok = ensemble.p_yy < config.sigma_y
    return bool(x_ok and y_ok) if config.stop_rule == "and" else bool(x_ok or y_ok)


def credible_region(ensemble: Ensemble, level: float) -> CredibleRegion:
    """Gaussian ``level`` credible ellipsoid around ``x_hat`` with shape ``P_xx``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    shape = np.atleast_2d(ensemble.p_xx)
    regularized_inverse(shape)  # raises SingularEllipsoid early
    return CredibleRegion(
        center=np.asarray(ensemble.x_hat, dtype=float).copy(),
        shape=shape.copy(),
        level=level,
        radius2=chi2_quantile(level, shape.shape[0]),
    )


def chi2_quantile(level: float, dof: int) -> float:
    return float(stats.chi2.ppf(level, dof))


def _measure(obj, x, p_x, lam, R, rng):
    """UT around each particle: ``(y, p_y, c_xy)`` with ``2n+1`` evaluations per particle."""
    n_part, n = x.shape
    pts = obj.domain.clamp(batch_sigma_points(x, p_x, lam))
    Y = np.asarray(eval_noisy(obj, pts.reshape(-1, n), rng)).reshape(n_part, 2 * n + 1)
    y, p_y = moments(Y, ut_weights(n, lam), R)
    return y, p_y, cloud_covariance(pts, Y)


def likelihood_variance(p_y: np.ndarray, config: PfoConfig) -> np.ndarray:
    """Variance of the Gaussian likelihood: the measurement noise ``R`` or the UT output variance.

    A noise-free configuration (``R == 0``) always falls back to the UT variance.
    """
    if config.likelihood_var == "noise" and config.R > 0:
        return np.full_like(p_y, config.R)
    return p_y


def _refresh(ens: Ensemble, mode: str) -> None:
    ens.x_hat, ens.y_hat = estimate(ens, mode)
    ens.p_xx, ens.p_yy = empirical_covariances(ens)


# ----------------------------------------------------------------------
# Engine
# ----------------------------------------------------------------------


class PfoStreams:
    """Per-phase random generators for one trial."""

    def __init__(self, seed: int):
        self.init = RngStream(seed, STREAM_INIT).generator()
        self.propose = RngStream(seed, STREAM_PROPOSE).generator()
        self.measure = RngStream(seed, STREAM_MEASURE).generator()
        self.resample = RngStream(seed, STREAM_RESAMPLE).generator()


def initialize(config: PfoConfig, obj: NoisyObjective, streams: PfoStreams) -> Ensemble:
    n_part, n = config.n_particles, obj.dim
    Q = config.Q_matrix(n)
    x = obj.domain.sample_uniform(streams.init, n_part)
    p_x = np.broadcast_to(Q, (n_part, n, n)).copy()
    y, p_y, c_xy = _measure(obj, x, p_x, config.lam, config.R, streams.measure)
    ens = Ensemble(
        x=x, w=np.full(n_part, 1.0 / n_part), y=y, p_x=p_x, p_y=p_y, c_xy=c_xy,
        x_hat=x.mean(axis=0), y_hat=float(y.mean()), p_xx=np.zeros((n, n)), p_yy=0.0,
        iteration=0, fes=n_part * (2 * n + 1), y_ref=float(np.min(y)),
    )
    _refresh(ens, config.estimate_mode)
    return ens


def step_coefficients(ens: Ensemble, config: PfoConfig) -> np.ndarray:
    """Per-particle multiplier of ``x_hat - x`` in the proposal mean.

    ``x-length`` moves each particle a distance ``s`` along the unit vector
    toward ``x_hat``; ``length`` moves it ``s`` along the unit augmented
    direction (so the x-move never exceeds ``|x_hat - x|``); ``literal`` uses
    ``s`` itself as the multiplier.
    """
    d = direction(ens.x, ens.y, ens.x_hat, ens.y_hat)
    norm_d = np.linalg.norm(d, axis=-1)
    if ens.iteration == 0:
        s = np.minimum(1.0, norm_d)
    else:
        try:
            s = step_size(d, ens.c_xy)
        except SingularEllipsoid:
            log.warning("singular ellipsoid at k=%d; falling back to zero steps", ens.iteration)
            s = np.zeros_like(norm_d)
    if config.step_rule == "literal":
        return s
    norm = norm_d if config.step_rule == "length" else np.linalg.norm(d[:, :-1], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(norm > 0, s / norm, 0.0)


def step(ens: Ensemble, obj: NoisyObjective, config: PfoConfig, streams: PfoStreams) -> tuple[Ensemble, bool, float]:
    """One full iteration. Returns the new ensemble, the resample flag and the pre-resample ESS."""
    n = obj.dim
    Q = config.Q_matrix(n)
    coef = step_coefficients(ens, config)
    x_new = propose(ens.x, ens.x_hat, coef, TransitionParams(config.gamma, Q), streams.propose, obj.domain)
    p_x = particle_prior_cov(x_new, ens.x_hat, Q)
    y, p_y, c_xy = _measure(obj, x_new, p_x, config.lam, config.R, streams.measure)
    y_ref = min(ens.y_ref, float(np.min(y)))
    try:
        w = weight_update(y, likelihood_variance(p_y, config), y_ref, ens.w)
    except AllWeightsZero:
        log.warning("all weights underflowed at k=%d; resetting to uniform", ens.iteration + 1)
        w = np.full(ens.n_particles, 1.0 / ens.n_particles)
    new = Ensemble(
        x=x_new, w=w, y=y, p_x=p_x, p_y=p_y, c_xy=c_xy,
        x_hat=ens.x_hat, y_hat=ens.y_hat, p_xx=ens.p_xx, p_yy=ens.p_yy,
        iteration=ens.iteration + 1, fes=ens.fes + ens.n_particles * (2 * n + 1), y_ref=y_ref,
    )
    ess = effective_sample_size(w)
    resampled = bool(config.resample and ess < config.n_thr)
    if resampled:
        new = systematic_resample(new, streams.resample)
    _refresh(new, config.estimate_mode)
    return new, resampled, ess


def run(config: PfoConfig, obj: NoisyObjective, *, keep_ensembles: bool = False) -> RunTrace:
    """Iterate until the covariance stopping rule fires or ``k_max`` is reached.

    ``max``-tagged objectives are minimized through their negation.
    """
    obj = obj.minimization_view()
    streams = PfoStreams(config.seed)
    ens = initialize(config, obj, streams)
    trace = RunTrace()
    if keep_ensembles:
        trace.ensembles.append(ens)
    trace.reason = "k_max"
    for _ in range(config.k_max):
        ens, resampled, ess = step(ens, obj, config, streams)
        trace.records.append(
            TraceRecord(
                k=ens.iteration, x_hat=ens.x_hat.copy(), y_hat=ens.y_hat, p_xx=ens.p_xx.copy(),
                p_yy=ens.p_yy, ess=ess, fes=ens.fes, resampled=resampled,
            )
        )
        if keep_ensembles:
            trace.ensembles.append(ens)
        if config.target_error is not None:
            if obj.known_optimum is None:
                raise ValueError("target_error needs an objective with a known optimum")
            if abs(ens.y_hat - obj.known_optimum[1]) < config.target_error:
                trace.reason = "target"
                break
        elif converged(ens, config):
            trace.reason = "converged"
            break
    trace.best_x, trace.best_y = ens.x_hat.copy(), ens.y_hat
    return trace
