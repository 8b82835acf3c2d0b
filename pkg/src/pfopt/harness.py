"""Experiment driver: Monte-Carlo studies, FES quantile tables, random parameter sweeps.

Trials and sweep samples are independent tasks keyed by their own seeds, so
results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import RngStream, SearchDomain
from .objective import NoisyObjective, eval_true, get_objective
from .pfo import PfoConfig, RunTrace, run
from .pso import PsoConfig, pso_run

Config = Union[PfoConfig, PsoConfig]

MC_HEADER = ("k", "rmse_x", "rmse_y", "mean_pxx", "mean_pyy", "mean_ess", "fes")
SWEEP_HEADER = ("sample", "k_max", "N", "n_thr", "lambda", "gamma", "q", "r", "e", "e_x", "e_y", "seed")
QUANTILE_ROWS = ("1st (best)", "7th", "13th (median)", "19th", "25th (worst)", "mean", "std")
_RANKS = (1, 7, 13, 19, 25)


class MissingOptimum(ValueError):
    """The objective has no known optimum to score against."""


class CheckpointBeforeFirstIteration(ValueError):
    """A FES checkpoint lies before the first recorded iteration of some trial."""


# ----------------------------------------------------------------------
# Per-objective parameter tables
# ----------------------------------------------------------------------

_T1 = dict(k_max=100, n_particles=50, lam=1.0, gamma=1.0, Q=1e-8, sigma_x=1e-5, sigma_y=1e-5,
           R=0.5, likelihood_var="noise")
_T2 = dict(k_max=100, n_particles=50, Q=1e-8, sigma_x=1e-8, sigma_y=1e-8, gamma=0.15)
_T2_NOISY = dict(_T2, lam=5.5, R=10.0)
_T2_CLEAN = dict(_T2, lam=3.0, R=0.0)
_T5 = dict(n_particles=200, sigma_x=3e-9, sigma_y=3e-9)

PFO_TABLE: dict[str, dict] = {
    "H1": dict(_T1, n_particles=100),
    "H2": dict(_T1),
    "H3": dict(_T1),
    "H4": dict(_T1, n_particles=100, lam=2.0, Q=1e-7),
    "H5": _T2_NOISY,
    "H6": _T2_CLEAN,
    "H7": _T2_NOISY,
    "H8": _T2_CLEAN,
    "H9": dict(_T5, k_max=250, lam=1.0, gamma=0.75, Q=[1e-4, 1e-2], R=0.1),
    "H10": dict(_T5, k_max=350, lam=1.5, gamma=0.75, Q=[1e-3, 1e-3], R=0.1),
    "H11": dict(_T5, k_max=250, lam=1.0, gamma=1.0, Q=[1e-4, 1e-4], R=0.1),
    "H12": dict(_T5, k_max=400, lam=1.0, gamma=0.4, Q=[3e-3, 1e-4], R=1.0),
    "H6_noiseless": _T2_CLEAN,
    "H8_noiseless": _T2_CLEAN,
    "cec_f1_d1": _T2_CLEAN,
    "cec_f4_d1": _T2_CLEAN,
}

_PSO_H6 = dict(n_particles=150, v_max=2.26, phi_p_max=0.37, phi_n_max=3.68, phi_g_max=7.4,
               w_max=0.9, w_min=0.25)
_PSO_H8 = dict(n_particles=150, v_max=7.18, phi_p_max=0.32, phi_n_max=7.0, phi_g_max=8.05,
               w_max=0.9, w_min=0.15)
_PSO_H8_LIKE = ("H7", "H8", "H8_noiseless", "cec_f4_d1")


def pfo_defaults(name: str) -> dict:
    """Table parameters for ``name`` (unknown names get the library defaults)."""
    return dict(PFO_TABLE.get(name, {}))


def pso_defaults(name: str) -> dict:
    """PSO settings for ``name``; objectives without their own row use the sphere row."""
    return dict(_PSO_H8 if name in _PSO_H8_LIKE else _PSO_H6)


def default_config(name: str, optimizer: str, **overrides) -> Config:
    if optimizer == "pfo":
        return PfoConfig(**{**pfo_defaults(name), **overrides})
    if optimizer == "pso":
        return PsoConfig(**{**pso_defaults(name), **overrides})
    raise ValueError(f"unknown optimizer {optimizer!r}")


# ----------------------------------------------------------------------
# Monte-Carlo studies
# ----------------------------------------------------------------------


def resolve_threads(threads: Optional[int]) -> int:
    return max(1, threads if threads else (os.cpu_count() or 1))


def _parallel_map(fn: Callable, items: Sequence, threads: Optional[int]) -> list:
    workers = min(resolve_threads(threads), max(1, len(items)))
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_trial(objective: NoisyObjective, optimizer: str, config: Config) -> RunTrace:
    if optimizer == "pfo":
        return run(config, objective)
    if optimizer == "pso":
        return pso_run(config, objective)
    raise ValueError(f"unknown optimizer {optimizer!r}")


@dataclass
class McStudy:
    """Seeded Monte-Carlo trials of one optimizer on one objective.

    Trial ``t`` runs with ``seed = base_seed + t``. Curves are indexed by
    iteration ``k = 1 .. K`` where ``K`` is the longest trial; trials that
    stopped early are padded with their terminal record.
    """

    objective: str
    optimizer: str = "pfo"
    config: Optional[Config] = None
    n_trials: int = 10
    base_seed: int = 0
    domain: Optional[SearchDomain] = None
    traces: list[RunTrace] = field(default_factory=list, repr=False)
    rmse_x: np.ndarray = field(default_factory=lambda: np.empty(0))
    rmse_y: np.ndarray = field(default_factory=lambda: np.empty(0))
    mean_pxx: np.ndarray = field(default_factory=lambda: np.empty(0))
    mean_pyy: np.ndarray = field(default_factory=lambda: np.empty(0))
    mean_ess: np.ndarray = field(default_factory=lambda: np.empty(0))
    fes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        if self.config is None:
            self.config = default_config(self.objective, self.optimizer)

    def trial_config(self, t: int) -> Config:
        return replace(self.config, seed=self.base_seed + t)

    def target(self) -> NoisyObjective:
        return get_objective(self.objective, self.domain).minimization_view()


def _padded(trace: RunTrace, k_len: int, attr: str) -> list:
    recs = trace.records
    return [getattr(recs[min(k, len(recs) - 1)], attr) for k in range(k_len)]


def run_mc(study: McStudy, threads: Optional[int] = None) -> McStudy:
    """Run every trial and fill the RMSE curves.

    Raises
    ------
    MissingOptimum
        If the objective has no known optimum.
    """
    obj = study.target()
    if obj.known_optimum is None:
        raise MissingOptimum(f"{obj.name} has no known optimum")
    x_star, y_star = obj.known_optimum
    configs = [study.trial_config(t) for t in range(study.n_trials)]
    study.traces = _parallel_map(lambda c: run_trial(obj, study.optimizer, c), configs, threads)
    if not study.traces:
        return study
    k_len = max(len(tr) for tr in study.traces)
    xs = np.array([_padded(tr, k_len, "x_hat") for tr in study.traces])  # (M, K, n)
    ys = np.array([_padded(tr, k_len, "y_hat") for tr in study.traces])
    pxx = np.array([[np.linalg.norm(p, 2) for p in _padded(tr, k_len, "p_xx")] for tr in study.traces])
    study.rmse_x = np.sqrt(np.mean(np.sum((xs - x_star) ** 2, axis=-1), axis=0))
    study.rmse_y = np.sqrt(np.mean((ys - y_star) ** 2, axis=0))
    study.mean_pxx = pxx.mean(axis=0)
    study.mean_pyy = np.array([_padded(tr, k_len, "p_yy") for tr in study.traces]).mean(axis=0)
    study.mean_ess = np.array([_padded(tr, k_len, "ess") for tr in study.traces]).mean(axis=0)
    study.fes = np.array([_padded(tr, k_len, "fes") for tr in study.traces]).max(axis=0)
    return study


def final_errors(study: McStudy, basis: str = "true") -> np.ndarray:
    """Per-trial final error ``|y - y*|``.

    ``basis="true"`` scores the noise-free core at the final best position;
    ``"observed"`` uses the optimizer's own final value.
    """
    obj = study.target()
    y_star = obj.known_optimum[1]
    if basis == "true":
        vals = [eval_true(obj, tr.best_x) for tr in study.traces]
    elif basis == "observed":
        vals = [tr.best_y for tr in study.traces]
    else:
        raise ValueError("basis must be 'true' or 'observed'")
    return np.abs(np.asarray(vals, dtype=float) - y_star)


def final_position_errors(study: McStudy) -> np.ndarray:
    x_star = study.target().known_optimum[0]
    return np.array([np.linalg.norm(tr.best_x - x_star) for tr in study.traces])


# ----------------------------------------------------------------------
# Quantile tables
# ----------------------------------------------------------------------


@dataclass
class QuantileTable:
    """Order-statistic summary of per-trial errors at FES checkpoints.

    ``values[j]`` holds the seven rows of :data:`QUANTILE_ROWS` for
    ``checkpoints[j]``.
    """

    checkpoints: list[int]
    values: np.ndarray  # (n_checkpoints, 7)
    errors: np.ndarray  # (n_checkpoints, M)

    def row(self, checkpoint: int, label: str) -> float:
        return float(self.values[self.checkpoints.index(checkpoint), QUANTILE_ROWS.index(label)])

    def median(self, checkpoint: int) -> float:
        return self.row(checkpoint, "13th (median)")

    def best(self, checkpoint: int) -> float:
        return self.row(checkpoint, "1st (best)")


def error_at_checkpoint(trace: RunTrace, y_star: float, checkpoint: int) -> float:
    """``|best y so far - y*|`` over records with ``fes <= checkpoint``."""
    ys = [r.y_hat for r in trace.records if r.fes <= checkpoint]
    if not ys:
        raise CheckpointBeforeFirstIteration(
            f"checkpoint {checkpoint} precedes the first record (fes={trace.records[0].fes})"
        )
    return abs(min(ys) - y_star)


def rank_summary(errors) -> np.ndarray:
    """Ranks 1/7/13/19/25 of 25 (linearly interpolated for other sizes), mean, std."""
    e = np.sort(np.asarray(errors, dtype=float))
    q = [(r - 1) / 24 for r in _RANKS]
    ranks = np.quantile(e, q) if e.size else np.full(len(q), np.nan)
    std = float(np.std(e, ddof=1)) if e.size > 1 else 0.0
    return np.array([*ranks, float(np.mean(e)) if e.size else np.nan, std])


def quantile_table(study: McStudy, fes_checkpoints: Sequence[int]) -> QuantileTable:
    obj = study.target()
    if obj.known_optimum is None:
        raise MissingOptimum(f"{obj.name} has no known optimum")
    y_star = obj.known_optimum[1]
    cps = [int(c) for c in fes_checkpoints]
    errs = np.array([[error_at_checkpoint(tr, y_star, c) for tr in study.traces] for c in cps])
    return QuantileTable(cps, np.array([rank_summary(e) for e in errs]), errs)


# ----------------------------------------------------------------------
# Random parameter sweeps
# ----------------------------------------------------------------------

DEFAULT_RANGES: dict[str, tuple[float, float]] = {
    "k_max": (20, 150),
    "N": (10, 100),
    "lambda": (0.5, 6.0),
    "gamma": (0.1, 1.5),
    "q": (1e-8, 1e-2),
    "r": (1e-3, 10.0),
}
_LOG_KEYS = ("q", "r", "sigma_x", "sigma_y")
_INT_KEYS = ("k_max", "N")
_CONFIG_KEY = {"N": "n_particles", "lambda": "lam", "q": "Q", "r": "R"}
SWEEP_STREAM = 101


@dataclass
class SweepRow:
    sample: int
    k_max: int
    N: int
    n_thr: float
    lam: float
    gamma: float
    q: float
    r: float
    e: float
    e_x: float
    e_y: float
    seed: int

    def as_csv_row(self) -> list:
        return [self.sample, self.k_max, self.N, self.n_thr, self.lam, self.gamma, self.q,
                self.r, self.e, self.e_x, self.e_y, self.seed]


@dataclass
class SweepStudy:
    """Independent random draws of PFO parameters, each run once.

    Integer keys (``k_max``, ``N``) are drawn uniformly over the inclusive
    range, ``lambda`` and ``gamma`` uniformly, and ``q``, ``r`` (and
    ``sigma_x``/``sigma_y`` when given) log-uniformly. Sample ``i`` runs with
    seed ``base_seed + i``.
    """

    objective: str
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    n_samples: int = 200
    base_seed: int = 0
    base_config: Optional[PfoConfig] = None
    rows: list[SweepRow] = field(default_factory=list)

    def __post_init__(self):
        unknown = set(self.ranges) - set(DEFAULT_RANGES) - {"sigma_x", "sigma_y"}
        if unknown:
            raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
        for key, (lo, hi) in self.ranges.items():
            if lo > hi:
                raise ValueError(f"range for {key} is empty")
            if key in _LOG_KEYS and lo <= 0:
                raise ValueError(f"log-uniform range for {key} must be positive")
        if self.base_config is None:
            self.base_config = default_config(self.objective, "pfo")


def sample_parameters(study: SweepStudy) -> list[dict]:
    """Parameter draws for every sample, keyed like :data:`DEFAULT_RANGES`."""
    rng = RngStream(study.base_seed, SWEEP_STREAM).generator()
    draws = []
    for _ in range(study.n_samples):
        p = {}
        for key in sorted(study.ranges):
            lo, hi = study.ranges[key]
            if lo == hi:
                p[key] = int(lo) if key in _INT_KEYS else float(lo)
            elif key in _INT_KEYS:
                p[key] = int(rng.integers(int(lo), int(hi), endpoint=True))
            elif key in _LOG_KEYS:
                p[key] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            else:
                p[key] = float(rng.uniform(lo, hi))
        draws.append(p)
    return draws


def run_sweep(study: SweepStudy, threads: Optional[int] = None) -> SweepStudy:
    obj = get_objective(study.objective).minimization_view()
    if obj.known_optimum is None:
        raise MissingOptimum(f"{obj.name} has no known optimum")
    x_star, y_star = obj.known_optimum

    def one(item):
        i, params = item
        over = {_CONFIG_KEY.get(k, k): v for k, v in params.items()}
        if "n_particles" in over:
            over["n_thr"] = over["n_particles"] / 2
        cfg = replace(study.base_config, seed=study.base_seed + i, **over)
        tr = run(cfg, obj)
        e_x = float(np.linalg.norm(tr.best_x - x_star))
        e_y = float(abs(tr.best_y - y_star))
        q = np.asarray(cfg.Q, dtype=float)
        return SweepRow(
            sample=i, k_max=cfg.k_max, N=cfg.n_particles, n_thr=float(cfg.n_thr), lam=float(cfg.lam),
            gamma=float(cfg.gamma), q=float(q.flat[0]) if q.size == 1 else float(np.mean(q)),
            r=float(cfg.R), e=float(np.hypot(e_x, e_y)), e_x=e_x, e_y=e_y, seed=cfg.seed,
        )

    study.rows = _parallel_map(one, list(enumerate(sample_parameters(study))), threads)
    return study


# ----------------------------------------------------------------------
# Export
# ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def mc_rows(study: McStudy) -> list[list]:
    return [
        [k + 1, study.rmse_x[k], study.rmse_y[k], study.mean_pxx[k], study.mean_pyy[k],
         study.mean_ess[k], int(study.fes[k])]
        for k in range(len(study.rmse_x))
    ]


def _config_dict(cfg: Config) -> dict:
    return cfg.as_dict() if hasattr(cfg, "as_dict") else asdict(cfg)


def export(study: Union[McStudy, SweepStudy], fmt: str, path: str) -> None:
    """Write ``study`` as CSV (LF line endings, header row) or JSON with the same field names."""
    if isinstance(study, McStudy):
        header, rows = MC_HEADER, mc_rows(study)
        meta = {"kind": "mc", "objective": study.objective, "optimizer": study.optimizer,
                "n_trials": study.n_trials, "base_seed": study.base_seed,
                "config": _config_dict(study.config)}
    elif isinstance(study, SweepStudy):
        header, rows = SWEEP_HEADER, [r.as_csv_row() for r in study.rows]
        meta = {"kind": "sweep", "objective": study.objective, "n_samples": study.n_samples,
                "base_seed": study.base_seed,
                "ranges": {k: list(v) for k, v in sorted(study.ranges.items())}}
    else:
        raise TypeError(f"cannot export {type(study).__name__}")
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows([[_fmt(v) for v in row] for row in rows])
    elif fmt == "json":
        records = [dict(zip(header, [_json_value(v) for v in row])) for row in rows]
        with open(path, "w", newline="") as fh:
            json.dump({**meta, "rows": records}, fh, indent=1, sort_keys=False)
            fh.write("\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}")


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)


def load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def load_csv(path: str) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [[float(v) for v in row] for row in reader]
