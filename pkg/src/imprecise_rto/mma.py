"""Method of moving asymptotes for one linear-or-convex inequality constraint.

Each update builds the usual separable reciprocal approximations around the
current point and solves the convex subproblem through its one-dimensional
dual, bisecting on the constraint multiplier.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalError

_RAA0 = 1e-5


@dataclass
class MmaState:
    """Asymptotes and the two previous iterates."""

    n: int
    xmin: float = 0.0
    xmax: float = 1.0
    move: float = 0.2
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    iter: int = 0
    last_lambda: float = field(default=0.0)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInputError("MMA needs at least one variable")
        if not self.xmax > self.xmin:
            raise InvalidInputError("xmax must exceed xmin")
        if not 0 < self.move <= 1:
            raise InvalidInputError(f"move limit must lie in (0, 1], got {self.move}")


def _asymptotes(state: MmaState, x: np.ndarray, span: float) -> tuple[np.ndarray, np.ndarray]:
    if state.iter < 2 or state.xold2 is None:
        return x - state.asyinit * span, x + state.asyinit * span
    trend = (x - state.xold1) * (state.xold1 - state.xold2)
    factor = np.ones_like(x)
    factor[trend > 0] = state.asyincr
    factor[trend < 0] = state.asydecr
    low = x - factor * (state.xold1 - state.low)
    upp = x + factor * (state.upp - state.xold1)
    low = np.clip(low, x - 10 * span, x - 0.01 * span)
    upp = np.clip(upp, x + 0.01 * span, x + 10 * span)
    return low, upp


def _pq(grad: np.ndarray, ux: np.ndarray, xl: np.ndarray, span: float):
    pos = np.maximum(grad, 0.0)
    neg = np.maximum(-grad, 0.0)
    base = 0.001 * (pos + neg) + _RAA0 / span
    return (pos + base) * ux ** 2, (neg + base) * xl ** 2


def mma_update(state: MmaState, x: np.ndarray, df0: np.ndarray, g: float,
               dg: np.ndarray, tighten: float = 1.0) -> np.ndarray:
    """One MMA step for ``min f0(x)`` subject to ``g(x) <= 0``.

    ``tighten < 1`` pulls the asymptotes towards ``x`` (a more conservative
    approximation).  The state is advanced in place.
    """
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    dg = np.asarray(dg, dtype=float)
    if x.shape != (state.n,) or df0.shape != x.shape or dg.shape != x.shape:
        raise InvalidInputError("MMA inputs have inconsistent shapes")
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dg)) and np.isfinite(g)):
        raise NumericalError("non-finite objective or constraint gradient passed to MMA")
    if not 0 < tighten <= 1:
        raise InvalidInputError(f"tighten must lie in (0, 1], got {tighten}")

    span = state.xmax - state.xmin
    low, upp = _asymptotes(state, x, span)
    if tighten < 1:
        low = x - tighten * (x - low)
        upp = x + tighten * (upp - x)
    lo_b = np.maximum.reduce([np.full_like(x, state.xmin), low + 0.1 * (x - low),
                              x - state.move * span])
    hi_b = np.minimum.reduce([np.full_like(x, state.xmax), upp - 0.1 * (upp - x),
                              x + state.move * span])

    ux, xl = upp - x, x - low
    p0, q0 = _pq(df0, ux, xl, span)
    p1, q1 = _pq(dg, ux, xl, span)
    r1 = g - float(np.sum(p1 / ux + q1 / xl))

    def primal(lam: float) -> np.ndarray:
        sp_, sq = np.sqrt(p0 + lam * p1), np.sqrt(q0 + lam * q1)
        return np.clip((sp_ * low + sq * upp) / (sp_ + sq), lo_b, hi_b)

    def gtilde(xx: np.ndarray) -> float:
        return r1 + float(np.sum(p1 / (upp - xx) + q1 / (xx - low)))

    lam = 0.0
    x_new = primal(0.0)
    if gtilde(x_new) > 0:
        lam_hi = 1.0
        while gtilde(primal(lam_hi)) > 0 and lam_hi < 1e12:
            lam_hi *= 10.0
        lam_lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lam_lo + lam_hi)
            if gtilde(primal(mid)) > 0:
                lam_lo = mid
            else:
                lam_hi = mid
            if lam_hi - lam_lo <= 1e-12 * max(1.0, lam_hi):
                break
        lam = lam_hi
        x_new = primal(lam)
    if not np.all(np.isfinite(x_new)):
        raise NumericalError("MMA subproblem produced non-finite densities")

    state.xold2 = None if state.xold1 is None else state.xold1.copy()
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    state.iter += 1
    state.last_lambda = lam
    return x_new
