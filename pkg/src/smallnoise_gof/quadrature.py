"""Quadrature shared by every path statistic.

Time integrals use the trapezoidal rule on the common uniform grid, except
drift compensators, which use left-point sums (``cumleft``) to match the
left-point likelihood and the Euler scheme. Integrals
over the state variable (``int_{x0}^{X_t} f(t, y) dy``) use composite
Gauss-Kronrod 7/15 panels, doubled per node until the embedded error
estimate is below tolerance.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import cumulative_trapezoid

__all__ = ["cumleft", "cumtrapz", "trapz", "tail_trapz", "state_integral"]

# Gauss-Kronrod 7/15 nodes on [-1, 1] (nonnegative half) and weights
_XK = np.array([0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                0.207784955007898467600689403773245, 0.0])
_WK = np.array([0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                0.204432940075298892414161999234649, 0.209482141084727828012999174891714])
_WG = np.array([0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                0.381830050505118944950369775488975, 0.417959183673469387755102040816327])
_X15 = np.concatenate([-_XK[:-1], _XK[::-1]])
_W15 = np.concatenate([_WK[:-1], _WK[::-1]])
_W7 = np.zeros(15)
_W7[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def cumtrapz(y, dt: float) -> np.ndarray:
    """Running trapezoid along axis 0, starting at zero."""
    return cumulative_trapezoid(np.asarray(y, dtype=float), dx=dt, axis=0, initial=0.0)


def cumleft(y, dt: float) -> np.ndarray:
    """Running left-point sum ``sum_{j<i} y_j dt`` along axis 0, starting at zero."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    np.cumsum(y[:-1] * dt, axis=0, out=out[1:])
    return out


def trapz(y, dt: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return dt * (0.5 * (y[0] + y[-1]) + y[1:-1].sum(axis=0))


def tail_trapz(y, dt: float) -> np.ndarray:
    """``int_{t_i}^{T} y`` at every node; last entry is exactly zero."""
    c = cumtrapz(y, dt)
    out = c[-1] - c
    out[-1] = 0.0
    return out


def _panels(f, t, a, b, panels):
    # t, a, b: (N,); (Kronrod, Gauss) estimates over [a, b] split into equal panels
    width = (b - a) / panels
    half = 0.5 * width
    kron = gauss = 0.0
    for p in range(panels):
        mid = a + (p + 0.5) * width
        y = mid[:, None] + half[:, None] * _X15[None, :]
        vals = np.asarray(f(t[:, None], y), dtype=float)
        if vals.ndim == 2:
            kron = kron + half * (vals @ _W15)
            gauss = gauss + half * (vals @ _W7)
        else:
            kron = kron + half[:, None] * np.einsum("nqk,q->nk", vals, _W15)
            gauss = gauss + half[:, None] * np.einsum("nqk,q->nk", vals, _W7)
    return kron, gauss


def state_integral(f, t, a, b, tol: float = 1e-9, max_panels: int = 1024) -> np.ndarray:
    """Signed ``int_a^b f(t, y) dy`` for arrays of limits.

    ``f(t, y)`` receives ``t`` of shape ``(N, 1)`` and ``y`` of shape
    ``(N, q)`` and returns ``(N, q)`` or ``(N, q, d)``. Each node uses
    composite 15-point Kronrod panels; the number of panels is doubled at
    the nodes where the embedded 7-point Gauss estimate differs by more than
    ``tol * max(1, |I|)``. A node that never converges raises.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a = np.broadcast_to(np.asarray(a, dtype=float), t.shape).copy()
    b = np.broadcast_to(np.asarray(b, dtype=float), t.shape).copy()
    todo = np.arange(t.size)
    out = None
    panels = 1
    while True:
        kron, gauss = _panels(f, t[todo], a[todo], b[todo], panels)
        if out is None:
            out = np.array(kron, dtype=float)
        else:
            out[todo] = kron
        with np.errstate(invalid="ignore"):
            # inf - inf gives NaN, which counts as unconverged below
            err = np.abs(kron - gauss)
        scale = np.maximum(1.0, np.abs(kron))
        if err.ndim > 1:
            err = err.reshape(err.shape[0], -1).max(axis=1)
            scale = scale.reshape(scale.shape[0], -1).max(axis=1)
        todo = todo[~(err <= tol * scale)]
        if not todo.size:
            return out
        panels *= 2
        if panels > max_panels:
            raise ArithmeticError(
                f"state integral did not reach tolerance {tol} at {todo.size} node(s)")
