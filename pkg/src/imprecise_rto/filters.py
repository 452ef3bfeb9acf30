"""Linear density filter followed by a volume-preserving smoothed Heaviside.

The projection is

    rho~ = eta [exp(-a (1 - r/eta)) - (1 - r/eta) exp(-a)]                      r <= eta
    rho~ = (1 - eta) [1 - exp(-a (r - eta)/(1 - eta)) + (r - eta) exp(-a)/(1 - eta)] + eta   r > eta

with ``r`` the filtered density and ``a`` the sharpness.  Both branches
are continuous at ``r = eta`` and map 0 to 0 and 1 to 1.  The threshold
``eta`` is chosen by bisection so the projected volume equals the filtered
volume.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError, NumericalError

ETA_TOL = 1e-13
_ALPHA_LINEAR = 1e-8


@dataclass(frozen=True)
class FilterState:
    """Precomputed weights ``H_ej = max(0, R - |x_e - x_j|) v_j``."""

    H: sp.csr_matrix
    Hs: np.ndarray
    radius: float
    volumes: np.ndarray
    periodic: bool = False

    @property
    def n(self) -> int:
        return self.Hs.size


def build_filter(nx: int, ny: int, radius: float, elem_size: float = 1.0,
                 periodic: bool = False) -> FilterState:
    """Neighbour weights on an ``nx x ny`` grid of square elements.

    With ``periodic`` the grid wraps around in both directions, which is
    what a tiled unit cell sees.  Otherwise boundary neighbourhoods are
    truncated.
    """
    if radius <= 0:
        raise InvalidInputError(f"filter radius must be positive, got {radius}")
    reach = int(np.ceil(radius / elem_size)) - 1
    reach = max(reach, 0)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    rows, cols, vals = [], [], []
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            w = radius - elem_size * np.hypot(di, dj)
            if w <= 0:
                continue
            ni, nj = i + di, j + dj
            if periodic:
                ni, nj = ni % nx, nj % ny
                ok = np.ones(i.size, dtype=bool)
            else:
                ok = (ni >= 0) & (ni < nx) & (nj >= 0) & (nj < ny)
            rows.append((j * nx + i)[ok])
            cols.append((nj * nx + ni)[ok])
            vals.append(np.full(int(ok.sum()), w))
    v = np.full(nx * ny, elem_size ** 2)
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nx * ny, nx * ny)).tocsr()
    H = (H @ sp.diags(v)).tocsr()
    Hs = np.asarray(H.sum(axis=1)).ravel()
    return FilterState(H, Hs, float(radius), v, periodic)


def linear_filter(rho: np.ndarray, state: FilterState) -> np.ndarray:
    return (state.H @ rho) / state.Hs


def _project(r: np.ndarray, alpha: float, eta: float) -> np.ndarray:
    out = np.empty_like(r)
    lo = r <= eta
    ea = np.exp(-alpha)
    if eta > 0:
        t = 1.0 - r[lo] / eta
        out[lo] = eta * (np.exp(-alpha * t) - t * ea)
    else:
        out[lo] = 0.0
    hi = ~lo
    if eta < 1:
        t = (r[hi] - eta) / (1.0 - eta)
        out[hi] = (1.0 - eta) * (1.0 - np.exp(-alpha * t) + t * ea) + eta
    else:
        out[hi] = 1.0
    return np.clip(out, 0.0, 1.0)


def project(rho_bar: np.ndarray, alpha: float, eta: float) -> np.ndarray:
    """Smoothed Heaviside at a given threshold."""
    if alpha < 0:
        raise InvalidInputError(f"alpha must be >= 0, got {alpha}")
    if not 0.0 <= eta <= 1.0:
        raise InvalidInputError(f"eta must lie in [0, 1], got {eta}")
    r = np.asarray(rho_bar, dtype=float)
    if alpha < _ALPHA_LINEAR:
        return r.copy()
    return _project(r, alpha, eta)


def heaviside_derivative(rho_bar: np.ndarray, alpha: float, eta: float) -> np.ndarray:
    """``d rho~ / d rho_bar`` at fixed ``eta``."""
    r = np.asarray(rho_bar, dtype=float)
    if alpha < _ALPHA_LINEAR:
        return np.ones_like(r)
    ea = np.exp(-alpha)
    out = np.empty_like(r)
    lo = r <= eta
    if eta > 0:
        out[lo] = alpha * np.exp(-alpha * (1.0 - r[lo] / eta)) + ea
    else:
        out[lo] = 0.0
    hi = ~lo
    if eta < 1:
        out[hi] = alpha * np.exp(-alpha * (r[hi] - eta) / (1.0 - eta)) + ea
    else:
        out[hi] = 0.0
    return out


def heaviside_eta_derivative(rho_bar: np.ndarray, alpha: float, eta: float) -> np.ndarray:
    """``d rho~ / d eta`` at fixed ``rho_bar``."""
    r = np.asarray(rho_bar, dtype=float)
    if alpha < _ALPHA_LINEAR:
        return np.zeros_like(r)
    ea = np.exp(-alpha)
    out = np.zeros_like(r)
    lo = r <= eta
    if eta > 0:
        t = 1.0 - r[lo] / eta
        e = np.exp(-alpha * t)
        out[lo] = e - t * ea - (alpha * e + ea) * r[lo] / eta
    hi = ~lo
    if eta < 1:
        t = (r[hi] - eta) / (1.0 - eta)
        e = np.exp(-alpha * t)
        out[hi] = e - t * ea + (alpha * e + ea) * (r[hi] - 1.0) / (1.0 - eta)
    return out


def heaviside_project(rho_bar: np.ndarray, alpha: float, volumes: np.ndarray | None = None,
                      target_volume: float | None = None) -> tuple[np.ndarray, float]:
    """Project with the threshold that matches ``target_volume``.

    ``target_volume`` defaults to the filtered volume ``sum v rho_bar``.
    Returns ``(rho_phys, eta)``.
    """
    r = np.asarray(rho_bar, dtype=float)
    v = np.ones_like(r) if volumes is None else np.asarray(volumes, dtype=float)
    target = float(v @ r) if target_volume is None else float(target_volume)
    if not 0.0 < target <= v.sum() * (1 + 1e-12):
        raise InvalidInputError(f"target volume {target} outside (0, {v.sum()}]")
    if alpha < _ALPHA_LINEAR:
        return r.copy(), 0.5

    def excess(eta):
        return float(v @ _project(r, alpha, eta)) - target

    lo, hi = 0.0, 1.0
    # projected volume falls as eta rises
    if excess(lo) < -ETA_TOL * target or excess(hi) > ETA_TOL * target:
        raise NumericalError("volume-matching threshold is not bracketed by [0, 1]")
    while hi - lo > 1e-14:
        mid = 0.5 * (lo + hi)
        e = excess(mid)
        if abs(e) <= ETA_TOL * target:
            lo = hi = mid
            break
        if e > 0:
            lo = mid
        else:
            hi = mid
    eta = 0.5 * (lo + hi)
    return _project(r, alpha, eta), eta


def filter_chain_sensitivity(dJ_drho_phys: np.ndarray, state: FilterState,
                             rho_bar: np.ndarray, alpha: float, eta: float,
                             eta_consistent: bool = False) -> np.ndarray:
    """Map a gradient with respect to projected densities back to raw ones.

    By default the threshold is held fixed.  With ``eta_consistent`` the
    gradient also carries the shift of the volume-matching threshold,
    obtained by implicit differentiation of ``sum v rho~ = sum v rho_bar``.
    """
    dJ = np.asarray(dJ_drho_phys, dtype=float)
    dr = heaviside_derivative(rho_bar, alpha, eta)
    g = dJ * dr
    if eta_consistent and alpha >= _ALPHA_LINEAR:
        v = state.volumes
        deta = heaviside_eta_derivative(rho_bar, alpha, eta)
        denom = float(v @ deta)
        if denom != 0.0:
            g = g + float(dJ @ deta) * v * (1.0 - dr) / denom
    return state.H.T @ (g / state.Hs)


def volume_fraction(rho_phys: np.ndarray, volumes: np.ndarray) -> float:
    return float(volumes @ rho_phys / volumes.sum())


def volume_constraint(rho_bar: np.ndarray, state: FilterState, volfrac: float):
    """``g = V(rho~)/V_total - volfrac`` and its gradient in the raw densities.

    The projection preserves volume, so the projected volume equals the
    filtered one and the constraint is linear in the raw densities.
    """
    v = state.volumes
    g = float(v @ rho_bar / v.sum()) - volfrac
    grad = state.H.T @ ((v / v.sum()) / state.Hs)
    return g, grad
