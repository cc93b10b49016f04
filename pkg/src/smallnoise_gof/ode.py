"""Noise-free limit dynamics and deterministic auxiliaries."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import AlternativeDrift, ModelSpec
from .quadrature import cumtrapz

__all__ = [
    "DeterministicPath",
    "Grid",
    "ODEError",
    "deviation_variance",
    "psi",
    "read_path_csv",
    "rk4",
    "sensitivity",
    "solve_alternative_ode",
    "solve_limit_ode",
    "write_path_csv",
]


class ODEError(ArithmeticError):
    """Non-finite drift during integration; ``payload`` holds (t, x, theta)."""

    def __init__(self, msg, payload):
        super().__init__(msg)
        self.payload = payload


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_i = i T / n``, ``i = 0..n``."""

    n: int
    T: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("grid needs n >= 2 intervals")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def t(self) -> np.ndarray:
        t = np.arange(self.n + 1) * self.dt
        t[-1] = self.T
        return t

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.n * factor, self.T)


@dataclass(frozen=True)
class DeterministicPath:
    grid: Grid
    values: np.ndarray

    @property
    def t(self):
        return self.grid.t


def rk4(f, y0, grid: Grid, context=None) -> np.ndarray:
    """Classical fourth-order Runge-Kutta for ``y' = f(t, y)`` on ``grid``.

    ``y0`` may be an array; the integration runs elementwise in parallel and
    the result has shape ``(n + 1,) + shape(y0)``.
    """
    t = grid.t
    h = grid.dt
    y = np.array(y0, dtype=float)
    out = np.empty((grid.n + 1,) + y.shape)
    out[0] = y
    for i in range(grid.n):
        ti = t[i]
        k1 = f(ti, y)
        k2 = f(ti + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(ti + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(ti + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise ODEError(f"non-finite state at t={t[i + 1]:.6g}",
                           {"t": float(t[i + 1]), "x": y.tolist(), "theta": context})
        out[i + 1] = y
    return out


def solve_limit_ode(model: ModelSpec, theta, grid: Grid, check: bool = True) -> DeterministicPath:
    """``dx/dt = S(theta, t, x)``, ``x_0 = x0``, by RK4 on ``grid``.

    ``theta`` of shape ``(M, d)`` solves M limit equations at once and gives
    ``values`` of shape ``(M, n + 1)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if check:
        for th in theta.reshape(-1, model.d):
            model.space.check(th)
    batch = theta.shape[:-1]
    x0 = np.full(batch, float(model.x0))
    vals = rk4(lambda t, x: model.S(theta, t, x), x0, grid, context=theta.tolist())
    return DeterministicPath(grid, np.moveaxis(vals, 0, -1))


def solve_alternative_ode(alt: AlternativeDrift, grid: Grid, x0: float) -> DeterministicPath:
    """``dy/dt = S_alt(t, y)``, ``y_0 = x0``, by RK4 on ``grid``."""
    vals = rk4(lambda t, y: np.asarray(alt(t, y), dtype=float), float(x0), grid, context=alt.name)
    return DeterministicPath(grid, vals)


def psi(model: ModelSpec, theta, x_path: DeterministicPath) -> np.ndarray:
    """``exp(int_0^t S'(theta, v, x_v) dv)`` at every node (trapezoid)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    t = x_path.grid.t
    expo = cumtrapz(model.dS_dx(theta, t, x_path.values), x_path.grid.dt)
    peak = float(np.max(np.abs(expo)))
    if peak > 700.0:
        raise OverflowError(f"psi exponent reaches {peak:.6g}")
    return np.exp(expo)


def sensitivity(model: ModelSpec, theta, x_path: DeterministicPath, psi_path=None) -> np.ndarray:
    """``d x_t / d theta = psi(t) int_0^t Sdot(theta, s, x_s) / psi(s) ds``.

    Returns an ``(n + 1, d)`` array whose first row is zero.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if psi_path is None:
        psi_path = psi(model, theta, x_path)
    t = x_path.grid.t
    sdot = model.dS_dtheta(theta, t, x_path.values)
    return psi_path[:, None] * cumtrapz(sdot / psi_path[:, None], x_path.grid.dt)


def deviation_variance(model: ModelSpec, theta, x_path: DeterministicPath, psi_path=None) -> np.ndarray:
    """Variance of the first-order deviation process,
    ``int_0^t (psi(t) sigma(s, x_s) / psi(s))^2 ds``, at every node."""
    if psi_path is None:
        psi_path = psi(model, theta, x_path)
    t = x_path.grid.t
    sig = model.diffusion(t, x_path.values)
    return psi_path ** 2 * cumtrapz((sig / psi_path) ** 2, x_path.grid.dt)


def write_path_csv(path, t, values) -> None:
    """Write ``t,x`` rows with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x"])
        for ti, xi in zip(np.asarray(t), np.asarray(values)):
            w.writerow([f"{ti:.17g}", f"{xi:.17g}"])


def read_path_csv(path):
    """Return ``(t, x)`` arrays from a ``t,x`` CSV file."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    return np.atleast_1d(data["t"]).astype(float), np.atleast_1d(data["x"]).astype(float)
