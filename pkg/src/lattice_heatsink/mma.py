"""Method of moving asymptotes for one inequality constraint.

Each call builds the separable convex approximation of the objective and the
constraint around the current point and solves it through its one-dimensional
dual. The constraint is relaxed by an artificial variable ``y >= 0`` penalised with
``c y + y^2 / 2``, so the subproblem is always feasible.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

_RAA0 = 1e-5
_C_ART = 1000.0


@dataclass
class MmaState:
    n: int
    move_limit: float = 0.15
    asy_init: float = 0.5
    asy_incr: float = 1.2
    asy_decr: float = 0.7
    iteration: int = 0
    low: np.ndarray = field(default=None)
    upp: np.ndarray = field(default=None)
    xold1: np.ndarray = field(default=None)
    xold2: np.ndarray = field(default=None)

    def __post_init__(self):
        if not 0 < self.move_limit <= 1:
            raise ValueError("move_limit must lie in (0, 1]")
        if not (0 < self.asy_decr < 1 < self.asy_incr and 0 < self.asy_init <= 1):
            raise ValueError("need 0 < asy_decr < 1 < asy_incr and 0 < asy_init <= 1")


def _asymptotes(x, xmin, xmax, st: MmaState):
    span = xmax - xmin
    if st.iteration < 2:
        return x - st.asy_init * span, x + st.asy_init * span
    trend = (x - st.xold1) * (st.xold1 - st.xold2)
    fac = np.where(trend > 0, st.asy_incr, np.where(trend < 0, st.asy_decr, 1.0))
    low = x - fac * (st.xold1 - st.low)
    upp = x + fac * (st.upp - st.xold1)
    low = np.clip(low, x - 10.0 * span, x - 0.01 * span)
    upp = np.clip(upp, x + 0.01 * span, x + 10.0 * span)
    return low, upp


def _pq(df, x, low, upp, span):
    pos, neg = np.maximum(df, 0.0), np.maximum(-df, 0.0)
    reg = _RAA0 / span
    p = (upp - x) ** 2 * (1.001 * pos + 0.001 * neg + reg)
    q = (x - low) ** 2 * (0.001 * pos + 1.001 * neg + reg)
    return p, q


def mma_update(x, df0, g, dg, state: MmaState, xmin=0.0, xmax=1.0) -> np.ndarray:
    """One MMA step for ``min f0(x)`` s.t. ``g(x) <= 0`` and box bounds.

    ``df0`` and ``dg`` are the gradients at ``x``. Returns the new iterate and
    advances ``state`` in place.
    """
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    dg = np.asarray(dg, dtype=float)
    if x.shape != (state.n,) or df0.shape != x.shape or dg.shape != x.shape:
        raise ValueError("x, df0 and dg must be vectors of length state.n")
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dg)) and np.isfinite(g)):
        raise ValueError("non-finite objective or constraint sensitivities")
    xmin = np.broadcast_to(np.asarray(xmin, dtype=float), x.shape)
    xmax = np.broadcast_to(np.asarray(xmax, dtype=float), x.shape)
    if np.any(x < xmin - 1e-12) or np.any(x > xmax + 1e-12):
        raise ValueError("x lies outside its bounds")
    span = np.maximum(xmax - xmin, 1e-12)

    low, upp = _asymptotes(x, xmin, xmax, state)
    lo = np.maximum.reduce([xmin, low + 0.1 * (x - low), x - state.move_limit * span])
    hi = np.minimum.reduce([xmax, upp - 0.1 * (upp - x), x + state.move_limit * span])

    p0, q0 = _pq(df0, x, low, upp, span)
    p1, q1 = _pq(dg, x, low, upp, span)
    b = float(np.sum(p1 / (upp - x) + q1 / (x - low)) - g)

    def primal(lam):
        P, Q = np.sqrt(p0 + lam * p1), np.sqrt(q0 + lam * q1)
        return np.clip((P * low + Q * upp) / (P + Q), lo, hi)

    def slack(lam):  # dual gradient: constraint value of the subproblem minus y(lam)
        xs = primal(lam)
        y = max(0.0, lam - _C_ART)
        return float(np.sum(p1 / (upp - xs) + q1 / (xs - low))) - b - y

    if slack(0.0) <= 0.0:
        lam = 0.0
    else:
        top = 1.0
        while slack(top) > 0.0:
            top *= 10.0
            if top > 1e20:
                raise RuntimeError("MMA dual bracket search failed")
        lam = brentq(slack, 0.0, top, xtol=1e-14, rtol=1e-14, maxiter=500)
    x_new = primal(lam)

    state.xold2 = state.xold1 if state.xold1 is not None else x.copy()
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    state.iteration += 1
    return x_new
