"""Maximum likelihood for the drift parameter, Fisher information and the
normalized score weights."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .model import ModelSpec, ParameterSpace
from .ode import DeterministicPath
from .quadrature import trapz
from .sde import Trajectory

__all__ = [
    "EstimationResult",
    "ScoreWeights",
    "SingularInformationError",
    "SingularInformationWarning",
    "empirical_information",
    "estimate",
    "fisher_information",
    "inverse_sqrt",
    "log_likelihood",
    "score_weights",
]

GRID_POINTS = 17
GRAD_TOL = 1e-8
COND_MAX = 1e12


class SingularInformationWarning(RuntimeWarning):
    pass


class SingularInformationError(np.linalg.LinAlgError):
    pass


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    info_matrix: np.ndarray
    log_lik: float
    converged: bool
    n_evals: int
    on_boundary: bool = False
    grad_norm: float = 0.0

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "info_matrix": self.info_matrix.tolist(),
            "log_lik": self.log_lik,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "on_boundary": self.on_boundary,
            "grad_norm": self.grad_norm,
        }


@dataclass
class ScoreWeights:
    h_values: np.ndarray
    info_sqrt_inv: np.ndarray


def _left(model, traj):
    t = traj.grid.t[:-1]
    x = traj.values[:-1]
    return t, x, np.diff(traj.values), model.diffusion(t, x)


def log_likelihood(model: ModelSpec, theta, traj: Trajectory):
    """Discretized log-likelihood ratio with left-point (Ito) sums.

    ``theta`` may carry leading batch axes; the result then has them too.
    """
    theta = np.asarray(theta, dtype=float)
    t, x, dX, sig = _left(model, traj)
    eps2 = traj.epsilon ** 2
    S = model.S(theta[..., None, :], t, x)
    w = 1.0 / (eps2 * sig ** 2)
    out = np.sum(S * w * dX, axis=-1) - 0.5 * traj.grid.dt * np.sum(S ** 2 * w, axis=-1)
    return float(np.reshape(out, -1)[0]) if theta.ndim == 1 else out


def _score_hessian(model, theta, t, x, dX, sig, dt):
    # gradient and Hessian of eps^2 * log L
    S = model.S(theta, t, x)
    Sd = model.dS_dtheta(theta, t, x)
    resid = (dX - S * dt) / sig ** 2
    g = Sd.T @ resid
    fisher = (Sd / sig[:, None] ** 2).T @ Sd * dt
    hess = np.einsum("i,ijk->jk", resid, model.d2S_dtheta2(theta, t, x)) - fisher
    return g, hess, fisher


def _inside(theta, space):
    return bool(np.all(theta > space.lower) and np.all(theta < space.upper))


def _scan_points(space: ParameterSpace, k=GRID_POINTS):
    a = space.lower + (space.upper - space.lower) * ((np.arange(k) + 0.5) / k)[:, None]
    if space.d == 1:
        return a
    g0, g1 = np.meshgrid(a[:, 0], a[:, 1], indexing="ij")
    pts = np.tile(space.center, (k * k, 1))
    pts[:, 0] = g0.ravel()
    pts[:, 1] = g1.ravel()
    return pts


def _linear_estimate(model, traj, space):
    t, x, dX, sig = _left(model, traj)
    H = model.dS_dtheta(space.center, t, x)
    Hw = H / sig[:, None] ** 2
    A = Hw.T @ H * traj.grid.dt
    b = Hw.T @ dX
    theta = np.linalg.solve(A, b)
    on_boundary = not _inside(theta, space)
    if on_boundary:
        L = np.linalg.cholesky(A)
        rhs = np.linalg.solve(L, b)
        theta = lsq_linear(L.T, rhs, bounds=(space.lower, space.upper)).x
    g = b - A @ theta
    return theta, float(np.linalg.norm(g)), on_boundary, 1


def _newton_estimate(model, traj, space, max_iter=60):
    t, x, dX, sig = _left(model, traj)
    dt = traj.grid.dt
    pts = _scan_points(space)
    ll = log_likelihood(model, pts, traj)
    n_evals = len(pts)
    theta = pts[int(np.argmax(ll))].copy()
    cur = float(np.max(ll))
    width = space.upper - space.lower
    gnorm = np.inf
    for _ in range(max_iter):
        g, hess, fisher = _score_hessian(model, theta, t, x, dX, sig, dt)
        gnorm = float(np.linalg.norm(g))
        n_evals += 1
        if gnorm < GRAD_TOL:
            break
        try:
            np.linalg.cholesky(-hess)
            step = np.linalg.solve(-hess, g)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(fisher, g)
        # keep the iterate strictly inside the box
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(step > 0, (space.upper - theta) / step,
                            np.where(step < 0, (space.lower - theta) / step, np.inf))
        scale = min(1.0, 0.999999 * float(np.min(room)))
        step = step * scale
        for _ in range(40):
            cand = theta + step
            val = float(log_likelihood(model, cand, traj))
            n_evals += 1
            if val >= cur - 1e-12 * max(1.0, abs(cur)):
                break
            step = 0.5 * step
        else:
            break
        theta, cur = cand, val
        if np.all(np.abs(step) < 1e-15 * np.maximum(1.0, np.abs(theta))):
            break
    near_face = np.any(np.minimum(theta - space.lower, space.upper - theta) < 1e-6 * width)
    return theta, gnorm, bool(near_face), n_evals


def estimate(model: ModelSpec, traj: Trajectory, space: ParameterSpace = None) -> EstimationResult:
    """Maximize the discretized likelihood over the open box ``space``.

    Linear families solve the normal equations exactly. Other families scan a
    grid of ``17**min(d, 2)`` cell centres and refine with Newton steps
    (Fisher scoring when the Hessian is not negative definite).
    ``converged`` requires the gradient of ``eps**2 log L`` to drop below
    ``1e-8`` at an interior point.
    """
    space = space or model.space
    if model.linear:
        theta, gnorm, on_boundary, n_evals = _linear_estimate(model, traj, space)
    else:
        theta, gnorm, on_boundary, n_evals = _newton_estimate(model, traj, space)
    info = empirical_information(model, theta, traj)
    return EstimationResult(
        theta_hat=theta,
        info_matrix=info,
        log_lik=float(log_likelihood(model, theta, traj)),
        converged=bool(gnorm < GRAD_TOL and not on_boundary),
        n_evals=n_evals,
        on_boundary=on_boundary,
        grad_norm=gnorm,
    )


def _information(model, theta, grid, x):
    t = grid.t
    sd = model.dS_dtheta(theta, t, x)
    sig = model.diffusion(t, x)
    outer = sd[:, :, None] * sd[:, None, :] / (sig ** 2)[:, None, None]
    info = trapz(outer, grid.dt)
    info = 0.5 * (info + info.T)
    cond = np.linalg.cond(info)
    if not cond < COND_MAX:
        warnings.warn(f"information matrix is near singular (condition number {cond:.3g})",
                      SingularInformationWarning, stacklevel=3)
    return info


def fisher_information(model: ModelSpec, theta, x_path: DeterministicPath) -> np.ndarray:
    """``I(theta) = int_0^T Sdot Sdot^T / sigma^2 dt`` along the limit path."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return _information(model, theta, x_path.grid, x_path.values)


def empirical_information(model: ModelSpec, theta, traj: Trajectory) -> np.ndarray:
    """Same integral along the observed path."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return _information(model, theta, traj.grid, traj.values)


def inverse_sqrt(mat) -> np.ndarray:
    """Symmetric inverse square root via eigendecomposition."""
    w, v = np.linalg.eigh(mat)
    if not np.all(w > 0) or w.max() / w.min() > COND_MAX:
        raise SingularInformationError(f"information matrix is singular (eigenvalues {w})")
    return (v / np.sqrt(w)) @ v.T


def score_weights(model: ModelSpec, theta, x_path: DeterministicPath) -> ScoreWeights:
    """``h(theta, t) = I(theta)^{-1/2} Sdot(theta, t, x_t) / sigma(t, x_t)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    t = x_path.grid.t
    info = fisher_information(model, theta, x_path)
    isq = inverse_sqrt(info)
    raw = model.dS_dtheta(theta, t, x_path.values) / model.diffusion(t, x_path.values)[:, None]
    return ScoreWeights(raw @ isq, isq)
