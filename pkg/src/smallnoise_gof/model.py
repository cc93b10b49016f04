"""Parametric drift families for small-noise diffusions.

A model is ``dX = S(theta, t, X) dt + eps * sigma(t, X) dW`` on ``[0, T]``
with ``X_0 = x0``. Everything is evaluated with numpy broadcasting:

* ``theta`` has shape ``(..., d)``; ``t`` and ``x`` broadcast against
  ``theta[..., 0]``.
* ``S`` and ``dS_dx`` return the broadcast shape; ``dS_dtheta`` and
  ``dSdot_dt`` append an axis of length ``d``; ``d2S_dtheta2`` appends
  ``(d, d)``.
* ``sigma``, ``dsigma_dt`` and ``dsigma_dx`` take only ``(t, x)``.

Any derivative that is not supplied is generated by central differences with
step ``1e-5``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import expr as _expr

__all__ = [
    "FD_STEP",
    "AlternativeDrift",
    "DerivativeReport",
    "ModelSpec",
    "ParameterSpace",
    "SigmaFloorError",
    "builtin_example1",
    "builtin_example2",
    "builtin_invisible",
    "builtin_ou",
    "builtin_ou_level",
    "invisible_alternative",
    "load_linear_model",
    "model_from_tag",
    "validate_derivatives",
]

FD_STEP = 1e-5
DERIVATIVE_RTOL = 1e-4


class SigmaFloorError(ValueError):
    """The diffusion coefficient dropped below the model's floor."""


@dataclass(frozen=True)
class ParameterSpace:
    """Open box ``prod_i (lower[i], upper[i])``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"empty parameter box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta > self.lower) and np.all(theta < self.upper))

    def check(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape[-1] != self.d:
            raise ValueError(f"theta has dimension {theta.shape[-1]}, expected {self.d}")
        if not (np.all(theta > self.lower) and np.all(theta < self.upper)):
            raise ValueError(f"theta={theta} is not inside the open box ({self.lower}, {self.upper})")
        return theta


# -- finite-difference fallbacks (module level so that models pickle) --------

def _step(v):
    h = FD_STEP * np.maximum(1.0, np.abs(v))
    # use the step actually representable in floating point
    return (v + h) - (v - h), v + h, v - h


def _fd_dx(fn, theta, t, x):
    x = np.asarray(x, dtype=float)
    span, xp, xm = _step(x)
    return (fn(theta, t, xp) - fn(theta, t, xm)) / span


def _fd_dtheta(fn, theta, t, x):
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[-1]
    cols = []
    for k in range(d):
        tp = theta.copy()
        tm = theta.copy()
        span, tp[..., k], tm[..., k] = _step(theta[..., k])
        diff = np.asarray(fn(tp, t, x)) - np.asarray(fn(tm, t, x))
        # vector-valued fn: extra trailing axes beyond the broadcast batch shape
        extra = diff.ndim - len(np.broadcast_shapes(theta.shape[:-1], np.shape(t), np.shape(x)))
        cols.append(diff / np.reshape(span, np.shape(span) + (1,) * extra))
    cols = np.broadcast_arrays(*cols)
    return np.stack(cols, axis=-1)


def _fd_sigma_dt(sig, t, x):
    t = np.asarray(t, dtype=float)
    span, tp, tm = _step(t)
    return (sig(tp, x) - sig(tm, x)) / span


def _fd_sigma_dx(sig, t, x):
    x = np.asarray(x, dtype=float)
    span, xp, xm = _step(x)
    return (sig(t, xp) - sig(t, xm)) / span


def _fd_dt_vec(fn, theta, t, x):
    t = np.asarray(t, dtype=float)
    span, tp, tm = _step(t)
    return (fn(theta, tp, x) - fn(theta, tm, x)) / np.asarray(span)[..., None]


def _fd_dx_vec(fn, theta, t, x):
    x = np.asarray(x, dtype=float)
    span, xp, xm = _step(x)
    return (fn(theta, t, xp) - fn(theta, t, xm)) / np.asarray(span)[..., None]


@dataclass(frozen=True)
class ModelSpec:
    """Drift family, diffusion coefficient and derivative suite."""

    d: int
    T: float
    x0: float
    S: Callable
    sigma: Callable
    space: ParameterSpace
    dS_dx: Optional[Callable] = None
    dS_dtheta: Optional[Callable] = None
    d2S_dtheta2: Optional[Callable] = None
    dSdot_dt: Optional[Callable] = None
    dsigma_dt: Optional[Callable] = None
    dsigma_dx: Optional[Callable] = None
    # derivative of dS_dtheta in x, only used by the optional Ito correction
    dSdot_dx: Optional[Callable] = None
    sigma_min: float = 1e-6
    linear: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.d) < 1:
            raise ValueError("d must be >= 1")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.space.d != self.d:
            raise ValueError("parameter space dimension does not match d")
        fill = {
            "dS_dx": partial(_fd_dx, self.S),
            "dS_dtheta": partial(_fd_dtheta, self.S),
            "dsigma_dt": partial(_fd_sigma_dt, self.sigma),
            "dsigma_dx": partial(_fd_sigma_dx, self.sigma),
        }
        for name, fn in fill.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, fn)
        if self.d2S_dtheta2 is None:
            object.__setattr__(self, "d2S_dtheta2", partial(_fd_dtheta, self.dS_dtheta))
        if self.dSdot_dt is None:
            object.__setattr__(self, "dSdot_dt", partial(_fd_dt_vec, self.dS_dtheta))
        if self.dSdot_dx is None:
            object.__setattr__(self, "dSdot_dx", partial(_fd_dx_vec, self.dS_dtheta))

    def diffusion(self, t, x):
        """``sigma(t, x)`` with the floor enforced."""
        s = np.asarray(self.sigma(t, x), dtype=float)
        bad = ~(s >= self.sigma_min)
        if np.any(bad):
            raise SigmaFloorError(
                f"sigma below floor {self.sigma_min} at {int(np.sum(bad))} point(s), "
                f"min value {np.nanmin(s)} (model {self.name})")
        return s

    def with_space(self, space: ParameterSpace) -> "ModelSpec":
        return dataclasses.replace(self, space=space)


@dataclass(frozen=True)
class AlternativeDrift:
    """A drift ``S_alt(t, x)`` outside the parametric family."""

    S_alt: Callable
    name: str = "alternative"

    def __call__(self, t, x):
        return self.S_alt(t, x)

    def check_growth(self, T, x_range, samples=1000, seed=0):
        """Sampled Lipschitz and linear-growth constants on ``[0,T] x x_range``.

        Returns ``(lipschitz, growth)``; both must be finite for the drift to
        be usable.
        """
        rng = np.random.default_rng(seed)
        t = rng.uniform(0.0, T, samples)
        x = rng.uniform(x_range[0], x_range[1], samples)
        y = rng.uniform(x_range[0], x_range[1], samples)
        sx = np.asarray(self.S_alt(t, x), dtype=float)
        sy = np.asarray(self.S_alt(t, y), dtype=float)
        gap = np.abs(x - y)
        keep = gap > 1e-12
        lip = float(np.max(np.abs(sx - sy)[keep] / gap[keep])) if keep.any() else 0.0
        growth = float(np.max(np.abs(sx) / (1.0 + np.abs(x))))
        return lip, growth


# -- derivative validation ---------------------------------------------------

@dataclass
class DerivativeReport:
    max_rel_error: dict
    tolerance: float
    samples: int

    @property
    def flagged(self) -> list:
        return [k for k, v in self.max_rel_error.items() if not v <= self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.flagged


def _rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if a.size else 0.0


def _x_envelope(model: ModelSpec):
    from .ode import Grid, solve_limit_ode

    try:
        path = solve_limit_ode(model, model.space.center, Grid(200, model.T))
        lo, hi = float(np.min(path.values)), float(np.max(path.values))
    except Exception:
        lo = hi = float(model.x0)
    return lo - 1.0, hi + 1.0


def validate_derivatives(model: ModelSpec, samples: int = 100, seed=0,
                         tol: float = DERIVATIVE_RTOL, x_range=None) -> DerivativeReport:
    """Cross-check every derivative field against central differences.

    Points are drawn uniformly from the parameter box (shrunk away from its
    faces), ``[0, T]`` and the envelope of the limit path at the box centre
    widened by one unit. Errors are relative, with ``max(1, |fd|)`` in the
    denominator. Failures are reported, never raised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    sp = model.space
    pad = 0.05 * (sp.upper - sp.lower)
    theta = rng.uniform(sp.lower + pad, sp.upper - pad, size=(samples, model.d))
    t = rng.uniform(0.0, model.T, samples)
    lo, hi = x_range if x_range is not None else _x_envelope(model)
    x = rng.uniform(lo, hi, samples)

    errs = {
        "dS_dx": _rel_err(model.dS_dx(theta, t, x), _fd_dx(model.S, theta, t, x)),
        "dS_dtheta": _rel_err(model.dS_dtheta(theta, t, x), _fd_dtheta(model.S, theta, t, x)),
        "d2S_dtheta2": _rel_err(model.d2S_dtheta2(theta, t, x),
                                _fd_dtheta(model.dS_dtheta, theta, t, x)),
        "dSdot_dt": _rel_err(model.dSdot_dt(theta, t, x), _fd_dt_vec(model.dS_dtheta, theta, t, x)),
        "dsigma_dt": _rel_err(model.dsigma_dt(t, x), _fd_sigma_dt(model.sigma, t, x)),
        "dsigma_dx": _rel_err(model.dsigma_dx(t, x), _fd_sigma_dx(model.sigma, t, x)),
    }
    return DerivativeReport(errs, tol, samples)


# -- built-in models -----------------------------------------------------------

def _bshape(theta, t, x):
    return np.broadcast_shapes(np.shape(theta)[:-1], np.shape(t), np.shape(x))


def _zeros(theta, t, x):
    return np.zeros(_bshape(theta, t, x))


def _zeros_vec(theta, t, x):
    return np.zeros(_bshape(theta, t, x) + (np.shape(theta)[-1],))


def _zeros_mat(theta, t, x):
    d = np.shape(theta)[-1]
    return np.zeros(_bshape(theta, t, x) + (d, d))


def _ones_vec(theta, t, x):
    return np.ones(_bshape(theta, t, x) + (np.shape(theta)[-1],))


def _unit_sigma(t, x):
    return np.ones(np.broadcast_shapes(np.shape(t), np.shape(x)))


def _zero_sigma(t, x):
    return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)))


def _ex1_drift(theta, t, x):
    theta = np.asarray(theta, dtype=float)
    return np.broadcast_to(theta[..., 0], _bshape(theta, t, x)) + 0.0


def builtin_example1(T: float = 1.0, lower: float = -10.0, upper: float = 10.0) -> ModelSpec:
    """``dX = theta dt + eps dW`` on ``[0, 1]``, ``X_0 = 0``."""
    return ModelSpec(
        d=1, T=T, x0=0.0, S=_ex1_drift, sigma=_unit_sigma,
        space=ParameterSpace([lower], [upper]),
        dS_dx=_zeros, dS_dtheta=_ones_vec, d2S_dtheta2=_zeros_mat, dSdot_dt=_zeros_vec,
        dSdot_dx=_zeros_vec, dsigma_dt=_zero_sigma, dsigma_dx=_zero_sigma,
        linear=True, name="example1",
    )


# linear families S = <theta, H(t, x)>

def _lin_drift(H, theta, t, x):
    theta = np.asarray(theta, dtype=float)
    h = np.asarray(H(t, x), dtype=float)
    return np.sum(theta * h, axis=-1)


def _lin_dx(dH_dx, theta, t, x):
    theta = np.asarray(theta, dtype=float)
    return np.sum(theta * np.asarray(dH_dx(t, x), dtype=float), axis=-1)


def _lin_dtheta(H, theta, t, x):
    h = np.asarray(H(t, x), dtype=float)
    return np.broadcast_to(h, _bshape(theta, t, x) + (h.shape[-1],)) + 0.0


def _check_H(H, d):
    probe = np.asarray(H(np.array(0.0), np.array(0.0)))
    if probe.shape[-1:] != (d,):
        raise ValueError(f"H(t, x) returns shape {probe.shape}, expected trailing dimension {d}")


def builtin_example2(H: Callable, sigma: Callable, d: int, *, T: float = 1.0, x0: float = 0.0,
                     space: Optional[ParameterSpace] = None, dH_dt: Optional[Callable] = None,
                     dH_dx: Optional[Callable] = None, dsigma_dt: Optional[Callable] = None,
                     dsigma_dx: Optional[Callable] = None, name: str = "linear",
                     params: Optional[dict] = None) -> ModelSpec:
    """Linear family ``S(theta, t, x) = <theta, H(t, x)>``.

    ``H(t, x)`` must return an array with trailing axis ``d``. Missing
    ``dH_dt``/``dH_dx`` fall back to finite differences.
    """
    _check_H(H, d)
    if space is None:
        space = ParameterSpace(-10.0 * np.ones(d), 10.0 * np.ones(d))
    if space.d != d:
        raise ValueError("parameter space dimension does not match d")
    kw = {}
    if dH_dx is not None:
        kw["dS_dx"] = partial(_lin_dx, dH_dx)
        kw["dSdot_dx"] = partial(_lin_dtheta, dH_dx)
    if dH_dt is not None:
        kw["dSdot_dt"] = partial(_lin_dtheta, dH_dt)
    return ModelSpec(
        d=d, T=T, x0=x0, S=partial(_lin_drift, H), sigma=sigma, space=space,
        dS_dtheta=partial(_lin_dtheta, H), d2S_dtheta2=_zeros_mat,
        dsigma_dt=dsigma_dt, dsigma_dx=dsigma_dx, linear=True, name=name,
        params=dict(params or {}), **kw)


def _ou_H(t, x):
    return -np.broadcast_to(np.asarray(x, dtype=float), np.broadcast_shapes(np.shape(t), np.shape(x)))[..., None]


def _ou_dH_dx(t, x):
    return -np.ones(np.broadcast_shapes(np.shape(t), np.shape(x)) + (1,))


def _ou_dH_dt(t, x):
    return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)) + (1,))


def builtin_ou(T: float = 1.0, x0: float = 1.0, lower: float = 0.05, upper: float = 5.0) -> ModelSpec:
    """``dX = -theta X dt + eps dW``, ``X_0 = 1``."""
    return builtin_example2(_ou_H, _unit_sigma, 1, T=T, x0=x0,
                            space=ParameterSpace([lower], [upper]), dH_dt=_ou_dH_dt,
                            dH_dx=_ou_dH_dx, dsigma_dt=_zero_sigma, dsigma_dx=_zero_sigma, name="ou")


def _ou_level_H(t, x):
    x = np.broadcast_to(np.asarray(x, dtype=float), np.broadcast_shapes(np.shape(t), np.shape(x)))
    return np.stack([-x, np.ones_like(x)], axis=-1)


def _ou_level_dH_dx(t, x):
    shape = np.broadcast_shapes(np.shape(t), np.shape(x))
    return np.stack([-np.ones(shape), np.zeros(shape)], axis=-1)


def _ou_level_dH_dt(t, x):
    return np.zeros(np.broadcast_shapes(np.shape(t), np.shape(x)) + (2,))


def builtin_ou_level(T: float = 1.0, x0: float = 1.0) -> ModelSpec:
    """Two-parameter ``dX = (-theta_1 X + theta_2) dt + eps dW``, ``X_0 = 1``."""
    return builtin_example2(_ou_level_H, _unit_sigma, 2, T=T, x0=x0,
                            space=ParameterSpace([0.05, -5.0], [5.0, 5.0]),
                            dH_dt=_ou_level_dH_dt, dH_dx=_ou_level_dH_dx,
                            dsigma_dt=_zero_sigma, dsigma_dx=_zero_sigma, name="ou_level")


# family that is flat in theta on the first half of the horizon

def _gate(T, t):
    u = np.maximum(np.asarray(t, dtype=float) - 0.5 * T, 0.0) / T
    return 16.0 * u * u


def _gate_dt(T, t):
    u = np.maximum(np.asarray(t, dtype=float) - 0.5 * T, 0.0) / T
    return 32.0 * u / T


def _inv_H(T, t, x):
    return (-_gate(T, t) * np.asarray(x, dtype=float))[..., None]


def _inv_dH_dx(T, t, x):
    g = _gate(T, t) * np.ones(np.broadcast_shapes(np.shape(t), np.shape(x)))
    return (-g)[..., None]


def _inv_dH_dt(T, t, x):
    return (-_gate_dt(T, t) * np.asarray(x, dtype=float))[..., None]


def builtin_invisible(T: float = 1.0, x0: float = 1.0) -> ModelSpec:
    """``dX = -theta g(t) X dt + eps dW`` with ``g = 0`` on ``[0, T/2]``.

    ``g(t) = 16 ((t - T/2)_+ / T)^2`` is continuously differentiable, so the
    family does not depend on theta on the first half of the horizon.
    """
    return builtin_example2(partial(_inv_H, T), _unit_sigma, 1, T=T, x0=x0,
                            space=ParameterSpace([0.05], [5.0]),
                            dH_dt=partial(_inv_dH_dt, T), dH_dx=partial(_inv_dH_dx, T),
                            dsigma_dt=_zero_sigma, dsigma_dx=_zero_sigma, name="invisible")


def _invisible_alt(T, theta0, amplitude, t, x):
    t = np.asarray(t, dtype=float)
    bump = np.where(t < 0.5 * T, np.sin(2.0 * np.pi * t / T) ** 2, 0.0)
    return -theta0 * _gate(T, t) * np.asarray(x, dtype=float) + amplitude * bump


def invisible_alternative(theta0: float = 1.0, amplitude: float = 1.0, T: float = 1.0) -> AlternativeDrift:
    """Alternative that differs from the invisible family only on ``[0, T/2)``,
    where the family carries no information about theta."""
    return AlternativeDrift(partial(_invisible_alt, T, float(theta0), float(amplitude)),
                            name=f"invisible(theta0={theta0}, a={amplitude})")


def _shifted_alt(model, theta0, shift, t, x):
    return model.S(np.atleast_1d(theta0), t, x) + shift


def family_alternative(model: ModelSpec, theta0, shift: float = 0.0) -> AlternativeDrift:
    """``S(theta0, t, x) + shift``; ``shift = 0`` gives a family member."""
    return AlternativeDrift(partial(_shifted_alt, model, np.atleast_1d(np.asarray(theta0, float)), float(shift)),
                            name=f"{model.name}(theta0={theta0}) + {shift}")


__all__.append("family_alternative")


# -- custom linear models from a config file ----------------------------------

def _expr_vec(exprs, t, x):
    return np.stack([e.evaluate(t, x) for e in exprs], axis=-1)


def _expr_scalar(e, t, x):
    return e.evaluate(t, x)


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_linear_model(path) -> ModelSpec:
    """Build a linear family from a TOML (or JSON) file.

    Keys: ``schema_version = 1``, ``H = ["-x", "cos(t)"]``, optional
    ``sigma = "1"``, ``T``, ``x0``, ``lower``, ``upper``.
    """
    path = Path(path)
    if path.suffix == ".json":
        cfg = json.loads(path.read_text())
    else:
        cfg = _load_toml(path)
    if int(cfg.get("schema_version", 1)) != 1:
        raise ValueError(f"unsupported schema_version {cfg.get('schema_version')}")
    comps = cfg["H"]
    if isinstance(comps, str):
        comps = [comps]
    H = tuple(_expr.parse(c) for c in comps)
    d = len(H)
    sig = _expr.parse(str(cfg.get("sigma", "1")))
    lower = np.asarray(cfg.get("lower", [-10.0] * d), dtype=float)
    upper = np.asarray(cfg.get("upper", [10.0] * d), dtype=float)
    return builtin_example2(
        partial(_expr_vec, H), partial(_expr_scalar, sig), d,
        T=float(cfg.get("T", 1.0)), x0=float(cfg.get("x0", 0.0)),
        space=ParameterSpace(lower, upper),
        dH_dt=partial(_expr_vec, tuple(e.diff("t") for e in H)),
        dH_dx=partial(_expr_vec, tuple(e.diff("x") for e in H)),
        dsigma_dt=partial(_expr_scalar, sig.diff("t")),
        dsigma_dx=partial(_expr_scalar, sig.diff("x")),
        name=f"linear:{path.name}", params={"H": list(comps), "sigma": str(cfg.get("sigma", "1"))},
    )


_BUILTINS = {
    "example1": builtin_example1,
    "ou": builtin_ou,
    "ou_level": builtin_ou_level,
    "invisible": builtin_invisible,
}


def model_from_tag(tag: str) -> ModelSpec:
    """Resolve ``example1``, ``ou``, ``ou_level``, ``invisible`` or
    ``linear:<file>``."""
    if tag.startswith("linear:"):
        return load_linear_model(tag.split(":", 1)[1])
    try:
        return _BUILTINS[tag]()
    except KeyError:
        raise ValueError(f"unknown model {tag!r}; choose from {sorted(_BUILTINS)} or linear:<file>") from None
