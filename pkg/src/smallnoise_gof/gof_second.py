"""Second goodness-of-fit test: a martingale-type transform of the normalized
residual process whose limit is a Wiener process for any parameter dimension."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .gof_first import TestReport, _default_threshold, _prepare, raw_rq, statistic_D
from .mle import EstimationResult, inverse_sqrt
from .model import ModelSpec, ParameterSpace
from .ode import DeterministicPath
from .quadrature import cumleft, cumtrapz, tail_trapz, trapz
from .sde import Trajectory

__all__ = [
    "DegenerateTailError",
    "SecondTestCurves",
    "TruncationPolicy",
    "nbar_matrices",
    "pinv_plus",
    "second_test",
    "u_process",
]


class DegenerateTailError(np.linalg.LinAlgError):
    """The tail information matrix is degenerate before the cutoff."""


@dataclass(frozen=True)
class TruncationPolicy:
    """Cutoff ``nu`` for the compensator and the eigenvalue floor of the
    plus-inverse. ``nu=None`` means ``0.05 * T``."""

    nu: Optional[float] = None
    min_eig: float = 1e-10

    def __post_init__(self):
        if self.nu is not None and not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.min_eig > 0:
            raise ValueError("min_eig must be positive")

    def cutoff(self, T: float) -> float:
        nu = 0.05 * T if self.nu is None else float(self.nu)
        if not nu < T:
            raise ValueError("nu must be smaller than T")
        return nu


@dataclass
class SecondTestCurves:
    t: np.ndarray
    U_values: np.ndarray
    W_values: np.ndarray
    Nbar: np.ndarray
    hbar: np.ndarray
    RQ: np.ndarray
    delta2_stat: float

    @property
    def det_nbar(self) -> np.ndarray:
        return np.linalg.det(self.Nbar)


def u_process(model: ModelSpec, theta_hat, traj: Trajectory,
              x_path: DeterministicPath = None, grid_consistent: bool = True) -> np.ndarray:
    """``U(t) = int_0^t dX / (eps sigma) - int_0^t D / (eps sigma) ds``.

    The stochastic integral uses left points. The compensator uses left
    points as well (trapezoid when ``grid_consistent`` is off), so that the
    drift cancels step by step as in the likelihood.
    """
    from .ode import solve_limit_ode

    theta = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if x_path is None:
        x_path = solve_limit_ode(model, theta, traj.grid, check=False)
    t, X, eps = traj.grid.t, traj.values, traj.epsilon
    sig = model.diffusion(t, X)
    U = np.zeros_like(X)
    U[1:] = np.cumsum(np.diff(X) / (eps * sig[:-1]))
    D = statistic_D(model, theta, t, X, x_path.values)
    integrate = cumleft if grid_consistent else cumtrapz
    return U - integrate(D / (eps * sig), traj.grid.dt)


def nbar_matrices(model: ModelSpec, theta_hat, traj) -> np.ndarray:
    """``Nbar(t) = int_t^T Sdot Sdot^T / sigma^2 ds`` along the path, shape
    ``(n + 1, d, d)``. Accepts a trajectory or a deterministic path."""
    theta = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    t, X = traj.grid.t, traj.values
    sd = model.dS_dtheta(theta, t, X)
    sig2 = model.diffusion(t, X) ** 2
    outer = sd[:, :, None] * sd[:, None, :] / sig2[:, None, None]
    return tail_trapz(outer, traj.grid.dt)


def pinv_plus(N, policy: TruncationPolicy = TruncationPolicy()) -> np.ndarray:
    """Inverse of ``N`` if its smallest eigenvalue is at least
    ``policy.min_eig``, otherwise the zero matrix."""
    N = np.atleast_2d(np.asarray(N, dtype=float))
    if N.shape[0] != N.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(N, N.T, rtol=1e-10, atol=1e-14):
        raise ValueError("matrix must be symmetric")
    w = np.linalg.eigvalsh(N)
    if w.min() < policy.min_eig:
        return np.zeros_like(N)
    return np.linalg.inv(N)


def second_test(model: ModelSpec, traj: Trajectory, space: ParameterSpace = None,
                c_alpha: float = None, alpha: float = 0.05,
                policy: TruncationPolicy = TruncationPolicy(),
                estimation: EstimationResult = None, x_path: DeterministicPath = None,
                normalized: bool = False, ito_correction: bool = False):
    """Run the second test on one trajectory.

    ``W(t) = U(t) + int_0^t hbar(s)^T Nbar(s)^+ Kbar(s) ds`` with the
    integrand frozen at its value on the last node ``<= T - nu``;
    ``Delta = T^{-2} int_0^T W^2 dt``; reject when ``Delta > c_alpha``.
    ``normalized`` builds the compensator from the information-normalized
    ``(h, N, K)`` instead, which must give the same W.
    """
    estimation, x_path = _prepare(model, traj, space or model.space, estimation, x_path)
    theta = estimation.theta_hat
    grid = traj.grid
    t, X = grid.t, traj.values
    T = grid.T

    R, Q = raw_rq(model, theta, traj, x_path, ito_correction=ito_correction)
    Kbar = (R - Q) / traj.epsilon
    hbar = model.dS_dtheta(theta, t, X) / model.diffusion(t, X)[:, None]
    Nbar = nbar_matrices(model, theta, traj)
    U = u_process(model, theta, traj, x_path)

    if normalized:
        isq = inverse_sqrt(estimation.info_matrix)
        h, N, K = hbar @ isq, isq @ Nbar @ isq, Kbar @ isq
    else:
        h, N, K = hbar, Nbar, Kbar

    nu = policy.cutoff(T)
    # last node not beyond T - nu (small slack for rounding of i * dt)
    last = int(np.floor((T - nu) / grid.dt + 1e-9))
    head = N[: last + 1]
    if not np.allclose(head, np.swapaxes(head, 1, 2), rtol=1e-10, atol=1e-14):
        raise ValueError("tail information matrices must be symmetric")
    bad = np.linalg.eigvalsh(head)[:, 0] < policy.min_eig
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateTailError(
            f"tail information degenerate at t={t[i]:.6g} before cutoff T - nu = {T - nu:.6g}")
    y = np.empty(grid.n + 1)
    y[: last + 1] = np.einsum("ij,ij->i", h[: last + 1],
                              np.linalg.solve(head, K[: last + 1, :, None])[..., 0])
    y[last + 1:] = y[last]
    W = U + cumtrapz(y, grid.dt)
    delta2 = float(trapz(W ** 2, grid.dt) / T ** 2)
    if c_alpha is None:
        c_alpha = _default_threshold("WIENER_SQ", alpha)
    report = TestReport("second", delta2, float(c_alpha), alpha, bool(delta2 > c_alpha),
                        np.asarray(theta), grid.n, traj.epsilon)
    return report, SecondTestCurves(t, U, W, Nbar, hbar, Kbar * traj.epsilon, delta2)
