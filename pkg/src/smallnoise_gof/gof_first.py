"""First goodness-of-fit test: Cramer-von Mises type statistic built from the
stochastic-integral-free processes D, R, Q and K."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mle import EstimationResult, estimate
from .model import AlternativeDrift, ModelSpec, ParameterSpace
from .ode import DeterministicPath, Grid, solve_alternative_ode, solve_limit_ode
from .quadrature import cumleft, cumtrapz, state_integral, trapz
from .sde import Trajectory

__all__ = [
    "EstimationFailure",
    "FirstTestCurves",
    "PowerDiagnostics",
    "TestReport",
    "first_test",
    "raw_rq",
    "statistic_D",
    "statistic_Q",
    "statistic_R",
    "theta_star",
]


class EstimationFailure(RuntimeError):
    def __init__(self, msg, estimation=None):
        super().__init__(msg)
        self.estimation = estimation


@dataclass
class TestReport:
    test: str
    statistic: float
    threshold: float
    alpha: Optional[float]
    reject: bool
    theta_hat: np.ndarray
    n: int
    epsilon: float

    __test__ = False  # keep pytest from collecting this class

    def to_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "alpha": self.alpha,
            "reject": self.reject,
            "theta_hat": np.atleast_1d(self.theta_hat).tolist(),
            "n": self.n,
            "epsilon": self.epsilon,
        }


@dataclass
class FirstTestCurves:
    t: np.ndarray
    K_values: np.ndarray
    h_emp: np.ndarray
    R_values: np.ndarray
    Q_values: np.ndarray
    delta_stat: float


@dataclass
class PowerDiagnostics:
    theta_star: np.ndarray
    separation: float
    c5_norm_sq: float
    unique: bool
    y_path: DeterministicPath


def statistic_D(model: ModelSpec, theta, s, X_s, x_s_theta):
    """Drift linearized around the limit path:
    ``S(theta, s, x_s) + S'(theta, s, X_s) (X_s - x_s)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    X_s = np.asarray(X_s, dtype=float)
    x_s = np.asarray(x_s_theta, dtype=float)
    return model.S(theta, s, x_s) + model.dS_dx(theta, s, X_s) * (X_s - x_s)


def _R_integrands(model, theta):
    def f(t, y):
        sd = model.dS_dtheta(theta, t, y)
        sig = model.diffusion(t, y)
        first = sd / (sig ** 2)[..., None]
        corr = (model.dSdot_dt(theta, t, y) * sig[..., None]
                - 2.0 * sd * model.dsigma_dt(t, y)[..., None]) / (sig ** 3)[..., None]
        return np.concatenate([first, corr], axis=-1)
    return f


def raw_rq(model: ModelSpec, theta, traj: Trajectory, x_path: DeterministicPath,
           ito_correction: bool = False, tol: float = 1e-9, grid_consistent: bool = True):
    """Unnormalized vector statistics ``(R, Q)``, each ``(n + 1, d)``.

    ``R(t) = int_{x0}^{X_t} Sdot/sigma^2 dy
    - int_0^t int_{x0}^{X_s} (Sdot'_s sigma - 2 Sdot sigma'_s)/sigma^3 dy ds``
    and ``Q(t) = int_0^t Sdot D / sigma^2 ds``. With ``ito_correction`` the
    ``eps^2/2 int sigma^2 M''_xx`` term is subtracted from R.

    With ``grid_consistent`` (default) the discretization matches the
    left-point likelihood: Q is a left-point sum, and R drops the O(dt) term
    ``dt/2 int S (g_t + S g_x) ds`` (``g = Sdot/sigma^2``) that the exact
    state integral picks up from the drift part of each increment. Both
    changes vanish as dt -> 0 but remove an O(dt/eps) bias in ``(R - Q)/eps``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = model.d
    t = traj.grid.t
    dt = traj.grid.dt
    X = traj.values
    inner = state_integral(_R_integrands(model, theta), t, model.x0, X, tol=tol)
    R = inner[:, :d] - cumtrapz(inner[:, d:], dt)
    sd = model.dS_dtheta(theta, t, X)
    sig = model.diffusion(t, X)
    D = statistic_D(model, theta, t, X, x_path.values)
    qint = sd * (D / sig ** 2)[:, None]
    gx = (model.dSdot_dx(theta, t, X) / (sig ** 2)[:, None]
          - 2.0 * sd * (model.dsigma_dx(t, X) / sig ** 3)[:, None])
    if grid_consistent:
        Q = cumleft(qint, dt)
        S = model.S(theta, t, X)[:, None]
        gt = (model.dSdot_dt(theta, t, X) / (sig ** 2)[:, None]
              - 2.0 * sd * (model.dsigma_dt(t, X) / sig ** 3)[:, None])
        R = R - 0.5 * dt * cumtrapz(S * (gt + S * gx), dt)
    else:
        Q = cumtrapz(qint, dt)
    if ito_correction:
        R = R - 0.5 * traj.epsilon ** 2 * cumtrapz(gx * (sig ** 2)[:, None], dt)
    return R, Q


def _scalar_info(model, theta, traj, info):
    if model.d != 1:
        raise ValueError("the first test is defined for a scalar parameter only (d = 1)")
    if info is None:
        from .mle import empirical_information
        info = empirical_information(model, theta, traj)
    return float(np.asarray(info).reshape(-1)[0])


def statistic_R(model: ModelSpec, theta, traj: Trajectory, info=None, **kw) -> np.ndarray:
    """Scalar R process normalized by ``sqrt(I)`` (observed-path information
    unless ``info`` is given)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    I = _scalar_info(model, theta, traj, info)
    x_path = solve_limit_ode(model, theta, traj.grid, check=False)
    R, _ = raw_rq(model, theta, traj, x_path, **kw)
    return R[:, 0] / np.sqrt(I)


def statistic_Q(model: ModelSpec, theta, traj: Trajectory, info=None, x_path=None,
                grid_consistent: bool = True) -> np.ndarray:
    """Scalar Q process normalized by ``sqrt(I)`` (left-point sum unless
    ``grid_consistent`` is off, see ``raw_rq``)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    I = _scalar_info(model, theta, traj, info)
    if x_path is None:
        x_path = solve_limit_ode(model, theta, traj.grid, check=False)
    t = traj.grid.t
    X = traj.values
    D = statistic_D(model, theta, t, X, x_path.values)
    sd = model.dS_dtheta(theta, t, X)[:, 0]
    integrate = cumleft if grid_consistent else cumtrapz
    return integrate(sd * D / model.diffusion(t, X) ** 2, traj.grid.dt) / np.sqrt(I)


def _prepare(model, traj, space, estimation, x_path):
    if estimation is None:
        estimation = estimate(model, traj, space)
    if not estimation.converged:
        raise EstimationFailure(
            f"MLE did not converge (grad {estimation.grad_norm:.3g}, "
            f"boundary={estimation.on_boundary})", estimation)
    if x_path is None:
        x_path = solve_limit_ode(model, estimation.theta_hat, traj.grid, check=False)
    return estimation, x_path


def _default_threshold(family, alpha):
    from . import limits
    return limits.quantile(family, alpha, limits.default_table(family))


def first_test(model: ModelSpec, traj: Trajectory, space: ParameterSpace = None,
               d_alpha: float = None, alpha: float = 0.05,
               estimation: EstimationResult = None, x_path: DeterministicPath = None,
               ito_correction: bool = False):
    """Run the first test on one trajectory.

    Returns ``(TestReport, FirstTestCurves)``; the hypothesis is rejected when
    ``delta > d_alpha``. Without ``d_alpha`` the threshold is the
    ``1 - alpha`` quantile of the integrated squared Brownian bridge from the
    shipped table.
    """
    if model.d != 1:
        raise ValueError("the first test is defined for a scalar parameter only (d = 1)")
    estimation, x_path = _prepare(model, traj, space or model.space, estimation, x_path)
    theta = estimation.theta_hat
    info = float(estimation.info_matrix[0, 0])
    t = traj.grid.t
    X = traj.values
    R, Q = raw_rq(model, theta, traj, x_path, ito_correction=ito_correction)
    norm = np.sqrt(info)
    R = R[:, 0] / norm
    Q = Q[:, 0] / norm
    K = (R - Q) / traj.epsilon
    h = model.dS_dtheta(theta, t, X)[:, 0] / (norm * model.diffusion(t, X))
    delta = float(trapz(K ** 2 * h ** 2, traj.grid.dt))
    if d_alpha is None:
        d_alpha = _default_threshold("BRIDGE_SQ", alpha)
    else:
        alpha = alpha if alpha is not None else None
    report = TestReport("first", delta, float(d_alpha), alpha, bool(delta > d_alpha),
                        np.asarray(theta), traj.grid.n, traj.epsilon)
    return report, FirstTestCurves(t, K, h, R, Q, delta)


# -- power diagnostics ---------------------------------------------------------

def _local_minima(vals, shape):
    v = vals.reshape(shape)
    mins = []
    for idx in np.ndindex(*shape):
        ok = True
        for ax in range(len(shape)):
            for off in (-1, 1):
                j = list(idx)
                j[ax] += off
                if 0 <= j[ax] < shape[ax] and v[tuple(j)] < v[idx]:
                    ok = False
        if ok:
            mins.append(idx)
    return mins


def theta_star(model: ModelSpec, alt: AlternativeDrift, space: ParameterSpace = None,
               grid: Grid = None, rel_tol: float = 1e-6) -> PowerDiagnostics:
    """Best approximation of ``alt`` inside the family along the alternative's
    limit path ``y``, the separation it leaves, and the consistency functional
    ``||I_3 h||^2`` of the first test.

    ``unique`` is False when two separate grid basins reach the minimum within
    ``rel_tol``.
    """
    from .mle import _scan_points

    space = space or model.space
    grid = grid or Grid(2000, model.T)
    y = solve_alternative_ode(alt, grid, model.x0)
    t, yv, dt = grid.t, y.values, grid.dt
    sig2 = model.diffusion(t, yv) ** 2
    s_alt = np.asarray(alt(t, yv), dtype=float)

    def objective(theta):
        r = model.S(np.asarray(theta)[..., None, :], t, yv) - s_alt
        return trapz(np.moveaxis(r ** 2 / sig2, -1, 0), dt)

    pts = _scan_points(space)
    vals = objective(pts)
    shape = (len(pts),) if model.d == 1 else (int(round(np.sqrt(len(pts)))),) * 2
    mins = _local_minima(vals, shape)
    best = float(np.min(vals))
    close = [m for m in mins if vals.reshape(shape)[m] <= best + rel_tol * max(best, 1e-300) + 1e-14]
    unique = len(close) <= 1

    theta = pts[int(np.argmin(vals))].copy()
    cur = best
    for _ in range(100):
        r = model.S(theta, t, yv) - s_alt
        sd = model.dS_dtheta(theta, t, yv)
        g = 2.0 * trapz(sd * (r / sig2)[:, None], dt)
        gn = 2.0 * trapz(sd[:, :, None] * sd[:, None, :] / sig2[:, None, None], dt)
        hess = gn + 2.0 * trapz(model.d2S_dtheta2(theta, t, yv) * (r / sig2)[:, None, None], dt)
        if np.linalg.norm(g) < 1e-13:
            break
        try:
            np.linalg.cholesky(hess)
            step = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.solve(gn, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(step > 0, (space.upper - theta) / step,
                            np.where(step < 0, (space.lower - theta) / step, np.inf))
        step = step * min(1.0, 0.999999 * float(np.min(room)))
        for _ in range(40):
            cand = theta + step
            val = float(objective(cand))
            if val <= cur + 1e-15 * max(cur, 1.0):
                break
            step = 0.5 * step
        else:
            break
        theta, cur = cand, val
        if np.all(np.abs(step) < 1e-15 * np.maximum(1.0, np.abs(theta))):
            break

    c5 = float("nan")
    if model.d == 1:
        sd = model.dS_dtheta(theta, t, yv)[:, 0]
        info = trapz(sd ** 2 / sig2, dt)
        diff = s_alt - model.S(theta, t, yv)
        inner = cumtrapz(sd * diff / sig2, dt) / info
        c5 = float(trapz(inner ** 2 * sd ** 2 / sig2, dt))
    return PowerDiagnostics(theta, float(max(cur, 0.0)), c5, unique, y)
