"""Euler-Maruyama simulation with per-replication keyed noise streams."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import AlternativeDrift, ModelSpec
from .ode import Grid, read_path_csv, write_path_csv

__all__ = [
    "NoiseStream",
    "SimulationError",
    "Trajectory",
    "brownian_increments",
    "coarsen_increments",
    "load_trajectory",
    "save_trajectory",
    "simulate",
    "simulate_alternative",
    "simulate_many",
]


class SimulationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class NoiseStream:
    """Gaussian increments fully determined by ``(seed, stream_id)``.

    Each stream is a Philox generator keyed through
    ``SeedSequence(seed, spawn_key=(stream_id,))``, so replications can be
    drawn in any order or on any worker.
    """

    seed: int
    stream_id: int = 0
    antithetic: bool = False

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.Philox(ss))

    def normals(self, n: int) -> np.ndarray:
        z = self.generator().standard_normal(n)
        return -z if self.antithetic else z


def brownian_increments(noise: NoiseStream, grid: Grid) -> np.ndarray:
    """``Delta W_i ~ N(0, dt)`` for the ``n`` grid intervals."""
    return noise.normals(grid.n) * np.sqrt(grid.dt)


def coarsen_increments(dW, factor: int = 2) -> np.ndarray:
    """Sum consecutive increments: the same Brownian path on a coarser grid."""
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] % factor:
        raise ValueError("number of increments must be divisible by factor")
    return dW.reshape(dW.shape[:-1] + (-1, factor)).sum(axis=-1)


@dataclass(frozen=True)
class Trajectory:
    grid: Grid
    values: np.ndarray
    epsilon: float
    seed: Optional[int] = None
    stream_id: Optional[int] = None
    model_tag: str = ""
    theta: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n + 1,):
            raise ValueError(f"values have shape {v.shape}, grid needs {(self.grid.n + 1,)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory contains non-finite values")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        object.__setattr__(self, "values", v)

    @property
    def t(self):
        return self.grid.t

    @property
    def dX(self):
        return np.diff(self.values)


def _euler(drift, diffusion, x0, dW, eps, grid):
    M = dW.shape[0]
    t = grid.t
    dt = grid.dt
    X = np.empty((M, grid.n + 1))
    x = np.full(M, float(x0))
    X[:, 0] = x
    for i in range(grid.n):
        x = x + drift(t[i], x) * dt + eps * diffusion(t[i], x) * dW[:, i]
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x))[0])
            raise SimulationError(f"non-finite state at step {i + 1} (row {bad})")
        X[:, i + 1] = x
    return X


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")


def _dW(grid, noises, increments):
    if increments is not None:
        dW = np.atleast_2d(np.asarray(increments, dtype=float))
        if dW.shape[1] != grid.n:
            raise ValueError(f"need {grid.n} increments per path, got {dW.shape[1]}")
        return dW
    return np.stack([brownian_increments(nz, grid) for nz in noises])


def simulate_many(model: ModelSpec, theta, epsilon: float, grid: Grid,
                  noises: Sequence[NoiseStream] = (), increments=None) -> np.ndarray:
    """Simulate one path per noise stream (or per row of ``increments``).

    Returns an ``(M, n + 1)`` array. Row ``i`` depends only on stream ``i``.
    """
    _check_eps(epsilon)
    theta = model.space.check(theta)
    dW = _dW(grid, noises, increments)
    return _euler(lambda t, x: model.S(theta, t, x), model.diffusion, model.x0, dW, epsilon, grid)


def simulate(model: ModelSpec, theta, epsilon: float, grid: Grid, noise: NoiseStream,
             increments=None) -> Trajectory:
    """Euler-Maruyama path of the null model
    ``X_{i+1} = X_i + S(theta, t_i, X_i) dt + eps sigma(t_i, X_i) dW_i``."""
    X = simulate_many(model, theta, epsilon, grid, [noise], increments)[0]
    return Trajectory(grid, X, float(epsilon), noise.seed, noise.stream_id, model.name,
                      tuple(np.atleast_1d(np.asarray(theta, float)).tolist()))


def simulate_alternative_many(alt: AlternativeDrift, model: ModelSpec, epsilon: float, grid: Grid,
                              noises: Sequence[NoiseStream] = (), increments=None) -> np.ndarray:
    """Paths with drift ``alt`` and the family's diffusion and initial value."""
    _check_eps(epsilon)
    dW = _dW(grid, noises, increments)
    return _euler(lambda t, x: np.asarray(alt(t, x), dtype=float), model.diffusion,
                  model.x0, dW, epsilon, grid)


__all__.append("simulate_alternative_many")


def simulate_alternative(alt: AlternativeDrift, model: ModelSpec, epsilon: float, grid: Grid,
                         noise: NoiseStream, increments=None) -> Trajectory:
    X = simulate_alternative_many(alt, model, epsilon, grid, [noise], increments)[0]
    return Trajectory(grid, X, float(epsilon), noise.seed, noise.stream_id, alt.name)


def save_trajectory(traj: Trajectory, path) -> Path:
    """Write ``path`` (CSV ``t,x``) and a JSON sidecar next to it."""
    path = Path(path)
    write_path_csv(path, traj.t, traj.values)
    meta = {
        "seed": traj.seed,
        "stream_id": traj.stream_id,
        "epsilon": traj.epsilon,
        "model_tag": traj.model_tag,
        "theta": list(traj.theta) if traj.theta is not None else None,
        "T": traj.grid.T,
        "n": traj.grid.n,
    }
    side = path.with_suffix(".json")
    side.write_text(json.dumps(meta, indent=2))
    return side


def load_trajectory(path, epsilon: Optional[float] = None) -> Trajectory:
    """Read a CSV trajectory; metadata come from the sidecar when present."""
    path = Path(path)
    t, x = read_path_csv(path)
    side = path.with_suffix(".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    eps = epsilon if epsilon is not None else meta.get("epsilon")
    if eps is None:
        raise ValueError("epsilon unknown: no sidecar metadata and none given")
    n = t.size - 1
    T = float(t[-1])
    if not np.allclose(np.diff(t), T / n, rtol=1e-9, atol=1e-12):
        raise ValueError("trajectory grid is not uniform")
    theta = meta.get("theta")
    return Trajectory(Grid(n, T), x, float(eps), meta.get("seed"), meta.get("stream_id"),
                      meta.get("model_tag", ""), tuple(theta) if theta else None)
