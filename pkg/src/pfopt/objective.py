"""Benchmark objectives with a deterministic core and an attached noise model.

Every objective evaluates ``H(x) = h(x) + v(x)``. Inputs outside the search
box are clamped before evaluation. Cores are vectorized over a leading batch
axis: ``x`` of shape ``(..., n)`` maps to values of shape ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import DimensionMismatch, SearchDomain, as_generator

__all__ = [
    "NoiseModel",
    "NoisyObjective",
    "eval_true",
    "eval_noisy",
    "catalog",
    "get_objective",
    "CATALOG_NAMES",
]

CEC_SHIFT = 50.0
CEC_BIAS = -450.0


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise ``v(x)``.

    kind
        ``"none"``; ``"additive"`` (``v ~ N(0, R)``); ``"multiplicative-state"``
        (``v ~ N(0, R)`` scaled by the scalar state ``x``); ``"cec"``, the
        CEC 2005 noise factor ``(h - bias) * (1 + 0.4 |N(0, 1)|)`` optionally
        followed by additive ``N(0, R)``.
    """

    kind: str = "none"
    R: float = 0.0
    bias: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "additive", "multiplicative-state", "cec"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.R < 0:
            raise ValueError("noise variance must be nonnegative")

    @property
    def is_deterministic(self) -> bool:
        return self.kind == "none" or (self.kind != "cec" and self.R == 0.0)

    def apply(self, h: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "none":
            return h
        sd = np.sqrt(self.R)
        if self.kind == "additive":
            return h + sd * rng.standard_normal(h.shape)
        if self.kind == "multiplicative-state":
            if x.shape[-1] != 1:
                raise DimensionMismatch("state-multiplicative noise is defined for scalar x only")
            return h + sd * rng.standard_normal(h.shape) * x[..., 0]
        factor = 1.0 + 0.4 * np.abs(rng.standard_normal(h.shape))
        out = (h - self.bias) * factor + self.bias
        if self.R > 0:
            out = out + sd * rng.standard_normal(h.shape)
        return out


@dataclass(frozen=True)
class NoisyObjective:
    name: str
    core: Callable[[np.ndarray], np.ndarray]
    noise: NoiseModel
    domain: SearchDomain
    known_optimum: Optional[tuple[np.ndarray, float]] = None
    extremum: str = "min"
    formula: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def minimization_view(self) -> "NoisyObjective":
        """The objective as handed to a minimizer: ``-h`` for ``max``-tagged entries."""
        if self.extremum == "min":
            return self
        core = self.core
        opt = self.known_optimum
        if opt is not None:
            opt = (opt[0], -opt[1])
        return replace(self, core=lambda x: -core(x), extremum="min", known_optimum=opt)

    def _prepare(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        scalar = x.ndim <= 1
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(
                f"{self.name} expects dimension {self.dim}, got {x.shape[-1]}"
            )
        return self.domain.clamp(x), scalar


def eval_true(obj: NoisyObjective, x) -> np.ndarray | float:
    """Noise-free core ``h(x)``. For oracles and scoring only."""
    xc, scalar = obj._prepare(x)
    h = np.asarray(obj.core(xc), dtype=float)
    return float(h) if scalar else h


def eval_noisy(obj: NoisyObjective, x, rng) -> np.ndarray | float:
    """One noisy measurement ``h(x) + v(x)`` per input row."""
    xc, scalar = obj._prepare(x)
    h = np.asarray(obj.core(xc), dtype=float)
    out = obj.noise.apply(h, xc, as_generator(rng))
    return float(out) if scalar else out


# ----------------------------------------------------------------------
# Cores
# ----------------------------------------------------------------------


def _h1(x):
    x = x[..., 0]
    return -np.sin(x) * (x - 2.0) ** 2


def _h2(x):
    return (x[..., 0] - 1.0) ** 2


def _h3(x):
    x = x[..., 0]
    return (x - 1.0) ** 2 + np.cos(10.0 * (x - 0.1))


def _cec_sphere(x):
    z = x - CEC_SHIFT
    return np.sum(z * z, axis=-1) + CEC_BIAS


def _cec_schwefel12(x):
    z = np.cumsum(x - CEC_SHIFT, axis=-1)
    return np.sum(z * z, axis=-1) + CEC_BIAS


def _h9(x):
    x1, x2 = x[..., 0], x[..., 1]
    return x1 * np.exp(-(x1**2) - x2**2)


def _h10(x):
    x1, x2 = x[..., 0], x[..., 1]
    return -0.1 * ((x1 - 1.0) ** 2 + (x2 - 1.0) ** 2)


def _h11(x):
    x1, x2 = x[..., 0], x[..., 1]
    return -np.cos(x1) * np.cos(x2) * np.exp(-((x1 - np.pi) ** 2 + (x2 - np.pi) ** 2))


def _h12(x):
    # printed without the usual "+ e" constant, so h(0, 0) = -e
    x1, x2 = x[..., 0], x[..., 1]
    return (
        -20.0 * np.exp(-0.2 * np.sqrt(0.5 * (x1**2 + x2**2)))
        - np.exp(0.5 * (np.cos(2 * np.pi * x1) + np.cos(2 * np.pi * x2)))
        + 20.0
    )


# Optima of H1 and H3 located by a 1e-6 grid over the box and bounded Brent refinement.
_H1_XSTAR = 8.167559790160798
_H1_YSTAR = -36.1838672992257
_H3_XSTAR = 1.0416448886729717
_H3_YSTAR = -0.9982310167107645


def _opt(x, y):
    return (np.atleast_1d(np.asarray(x, dtype=float)), float(y))


def catalog() -> list[NoisyObjective]:
    """All benchmark objectives, in listing order."""
    box = SearchDomain.box
    cec_dom = box(-100.0, 100.0)
    cec_opt = _opt(CEC_SHIFT, CEC_BIAS)
    h9_x = -1.0 / np.sqrt(2.0)
    return [
        NoisyObjective("H1", _h1, NoiseModel("additive", 0.5), box(0.0, 10.0),
                       _opt(_H1_XSTAR, _H1_YSTAR), formula="-sin(x)(x-2)^2 + v"),
        NoisyObjective("H2", _h2, NoiseModel("additive", 0.5), box(-5.0, 5.0),
                       _opt(1.0, 0.0), formula="(x-1)^2 + v"),
        NoisyObjective("H3", _h3, NoiseModel("additive", 0.5), box(-5.0, 5.0),
                       _opt(_H3_XSTAR, _H3_YSTAR), formula="(x-1)^2 + cos(10(x-0.1)) + v"),
        NoisyObjective("H4", _h1, NoiseModel("multiplicative-state", 0.5), box(0.0, 10.0),
                       _opt(_H1_XSTAR, _H1_YSTAR), formula="-sin(x)(x-2)^2 + v*x"),
        NoisyObjective("H5", _cec_sphere, NoiseModel("additive", 10.0), cec_dom, cec_opt,
                       formula="f1(x) + v"),
        NoisyObjective("H6", _cec_sphere, NoiseModel("none"), cec_dom, cec_opt,
                       formula="f1(x)"),
        NoisyObjective("H7", _cec_schwefel12, NoiseModel("cec", 10.0, CEC_BIAS), cec_dom, cec_opt,
                       formula="f4(x) + v"),
        NoisyObjective("H8", _cec_schwefel12, NoiseModel("cec", 0.0, CEC_BIAS), cec_dom, cec_opt,
                       formula="f4(x)"),
        NoisyObjective("H9", _h9, NoiseModel("additive", 0.1), box(-2.0, 2.0, 2),
                       _opt([h9_x, 0.0], -np.exp(-0.5) / np.sqrt(2.0)),
                       formula="x1 exp(-x1^2 - x2^2) + v"),
        NoisyObjective("H10", _h10, NoiseModel("none"), SearchDomain([-2.0, -2.0], [4.0, 4.0]),
                       _opt([1.0, 1.0], 0.0), extremum="max",
                       formula="-0.1((x1-1)^2 + (x2-1)^2)"),
        NoisyObjective("H11", _h11, NoiseModel("additive", 0.1), box(0.0, 2 * np.pi, 2),
                       _opt([np.pi, np.pi], -1.0),
                       formula="-cos(x1)cos(x2)exp(-((x1-pi)^2 + (x2-pi)^2)) + v"),
        NoisyObjective("H12", _h12, NoiseModel("additive", 1.0), box(-5.0, 5.0, 2),
                       _opt([0.0, 0.0], -np.e), formula="Ackley (no +e) + v"),
        NoisyObjective("H6_noiseless", _cec_sphere, NoiseModel("none"), cec_dom, cec_opt,
                       formula="f1(x)"),
        NoisyObjective("H8_noiseless", _cec_schwefel12, NoiseModel("none"), cec_dom, cec_opt,
                       formula="f4(x) without the CEC noise factor"),
        NoisyObjective("cec_f1_d1", _cec_sphere, NoiseModel("none"), cec_dom, cec_opt,
                       formula="CEC2005 f1, D=1, o=50, bias=-450"),
        NoisyObjective("cec_f4_d1", _cec_schwefel12, NoiseModel("cec", 0.0, CEC_BIAS), cec_dom,
                       cec_opt, formula="CEC2005 f4, D=1, o=50, bias=-450"),
    ]


CATALOG_NAMES = tuple(o.name for o in catalog())


def get_objective(name: str, domain: Optional[SearchDomain] = None) -> NoisyObjective:
    for obj in catalog():
        if obj.name == name:
            return obj if domain is None else replace(obj, domain=domain)
    raise KeyError(f"unknown objective {name!r}; choose from {', '.join(CATALOG_NAMES)}")
