"""Method of Moving Asymptotes for ``min f0(x)`` s.t. ``f_i(x) <= 0``, ``lo <= x <= hi``.

Each step builds the separable convex approximation of the objective and the
constraints and solves it through its smooth concave dual. Elastic variables
``y_i >= 0`` with a large linear penalty keep the subproblem feasible, which
makes the method push the constraints down first when it starts infeasible.
"""
from __future__ import annotations

import dataclasses
import logging

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)


class MmaError(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclasses.dataclass
class MmaSettings:
    asy_init: float = 0.5
    asy_incr: float = 1.2
    asy_decr: float = 0.7
    move: float = 0.1
    albefa: float = 0.1
    c: float = 1000.0
    d: float = 1.0
    raa0: float = 1e-5
    asy_min: float = 1e-3
    asy_max: float = 10.0
    max_retries: int = 4


@dataclasses.dataclass
class MmaState:
    x: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    x_old1: np.ndarray | None = None
    x_old2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    move: float = 0.1
    iteration: int = 0
    history: list = dataclasses.field(default_factory=list)

    @classmethod
    def start(cls, x0, lo, hi, settings: MmaSettings | None = None) -> "MmaState":
        settings = settings or MmaSettings()
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("invalid bounds")
        x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
        return cls(x=x0, lo=lo, hi=hi, move=settings.move)


def _asymptotes(state: MmaState, s: MmaSettings):
    x, span = state.x, state.hi - state.lo
    if state.iteration < 2 or state.low is None:
        low = x - s.asy_init * span
        upp = x + s.asy_init * span
    else:
        osc = (x - state.x_old1) * (state.x_old1 - state.x_old2)
        factor = np.where(osc > 0, s.asy_incr, np.where(osc < 0, s.asy_decr, 1.0))
        low = x - factor * (state.x_old1 - state.low)
        upp = x + factor * (state.upp - state.x_old1)
        low = np.clip(low, x - s.asy_max * span, x - s.asy_min * span)
        upp = np.clip(upp, x + s.asy_min * span, x + s.asy_max * span)
    return low, upp


def _approximation(x, low, upp, span, f, df, raa0):
    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    pos = np.maximum(df, 0.0)
    neg = np.maximum(-df, 0.0)
    reg = raa0 / span
    p = ux2 * (1.001 * pos + 0.001 * neg + reg)
    q = xl2 * (0.001 * pos + 1.001 * neg + reg)
    r = f - p @ (1.0 / (upp - x)) - q @ (1.0 / (x - low))
    return p, q, r


def solve_subproblem(x, low, upp, alpha, beta, f0, df0, f, df, s: MmaSettings, span):
    """Solve the convex subproblem through its dual; returns ``(x, y, lam)``."""
    p0, q0, r0 = _approximation(x, low, upp, span, f0, df0, s.raa0)
    m = len(f)
    if m:
        P, Q, R = _approximation(x, low, upp, span, f, df, s.raa0)
    else:
        P = Q = np.zeros((0, len(x)))
        R = np.zeros(0)
    c = np.full(m, s.c)
    d = np.full(m, s.d)

    def primal(lam):
        Pl = p0 + lam @ P
        Ql = q0 + lam @ Q
        sp, sq = np.sqrt(Pl), np.sqrt(Ql)
        xx = (sp * low + sq * upp) / (sp + sq)
        xx = np.clip(xx, alpha, beta)
        y = np.maximum(0.0, (lam - c) / d)
        return xx, y, Pl, Ql

    def neg_dual(lam):
        xx, y, Pl, Ql = primal(lam)
        inv_u = 1.0 / (upp - xx)
        inv_l = 1.0 / (xx - low)
        W = r0 + lam @ R + Pl @ inv_u + Ql @ inv_l + c @ y + 0.5 * d @ (y * y) - lam @ y
        grad = R + P @ inv_u + Q @ inv_l - y
        return -W, -grad

    if m == 0:
        xx, y, _, _ = primal(np.zeros(0))
        return xx, y, np.zeros(0), True
    lam0 = np.full(m, 1.0)
    res = minimize(
        neg_dual,
        lam0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(0.0, None)] * m,
        options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-10},
    )
    xx, y, _, _ = primal(res.x)
    ok = bool(np.all(np.isfinite(xx))) and (res.success or res.status == 2)
    return xx, y, res.x, ok


def mma_step(state: MmaState, f0, df0, f, df, settings: MmaSettings | None = None) -> np.ndarray:
    """Advance ``state`` by one MMA iteration and return the new iterate."""
    s = settings or MmaSettings()
    df0 = np.asarray(df0, dtype=float)
    f = np.atleast_1d(np.asarray(f, dtype=float))
    df = np.asarray(df, dtype=float).reshape(len(f), len(state.x))
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(df)) and np.all(np.isfinite(f))):
        raise MmaError("non-finite response or gradient", state)
    x = state.x
    span = state.hi - state.lo
    low, upp = _asymptotes(state, s)
    move = state.move
    for attempt in range(s.max_retries + 1):
        alpha = np.maximum.reduce([state.lo, low + s.albefa * (x - low), x - move * span])
        beta = np.minimum.reduce([state.hi, upp - s.albefa * (upp - x), x + move * span])
        x_new, _, _, ok = solve_subproblem(x, low, upp, alpha, beta, float(f0), df0, f, df, s, span)
        if ok:
            break
        log.warning("MMA dual did not converge, shrinking move limit (attempt %d)", attempt + 1)
        move *= 0.5
    else:
        raise MmaError("MMA subproblem failed repeatedly", state)
    state.x_old2 = state.x_old1 if state.x_old1 is not None else x.copy()
    state.x_old1 = x.copy()
    state.low, state.upp = low, upp
    state.x = np.clip(x_new, state.lo, state.hi)
    state.iteration += 1
    return state.x
