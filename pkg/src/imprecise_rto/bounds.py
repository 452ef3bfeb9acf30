"""Interval bounds of compliance moments over a parameterized p-box.

The compliance matrix is computed once at reference load parameters
``(mu_ref, sigma_ref)``.  Because the mean-load case scales with ``mu`` and
every field mode with ``sigma``, the matrix at any other point of the p-box
is ``c_ij s_i s_j`` with ``s_0 = mu / mu_ref`` and ``s_i = sigma / sigma_ref``.
Bounds are searched over the ``(mu, sigma)`` box by corner enumeration
(CA), a thinned Sobol scan (QMCS) or particle swarms (PSO).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import InvalidInputError, PreconditionViolation
from .moments import ISSERLIS_FULL, DIAGONAL_FREE, check_mode
from .random_field import PBox

QUANTITIES = ("mean", "std", "obj")
SOBOL_SKIP = 1000
SOBOL_STRIDE = 101


@dataclass(frozen=True)
class RefCompliance:
    """Compliance matrix together with the load parameters it was built at."""

    C: np.ndarray
    mu_ref: float
    sigma_ref: float

    def __post_init__(self):
        if self.mu_ref == 0 or self.sigma_ref == 0:
            raise InvalidInputError("reference mean and std-dev must be non-zero")

    def scales(self, mu, sigma) -> np.ndarray:
        """``(n, M + 1)`` per-case scale factors for arrays of parameters."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        s = np.empty((mu.size, self.C.shape[0]))
        s[:, 0] = mu / self.mu_ref
        s[:, 1:] = (sigma / self.sigma_ref)[:, None]
        return s


def scale_compliance(C_ref: np.ndarray, mu_ref: float, sigma_ref: float,
                     mu: float, sigma: float) -> np.ndarray:
    """Compliance matrix at ``(mu, sigma)`` from one built at the reference point."""
    ref = RefCompliance(np.asarray(C_ref, dtype=float), mu_ref, sigma_ref)
    s = ref.scales(mu, sigma)[0]
    return ref.C * np.outer(s, s)


def evaluate_points(ref: RefCompliance, mu, sigma, beta: float,
                    mode: str = ISSERLIS_FULL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, std-dev and objective at each ``(mu, sigma)`` pair."""
    mode = check_mode(mode)
    s2 = ref.scales(mu, sigma) ** 2
    C = ref.C
    mean = s2 @ np.diag(C)
    quad = np.einsum("ni,ij,nj->n", s2, C * C, s2)
    if mode == DIAGONAL_FREE:
        quad = quad - (s2 ** 2) @ (np.diag(C) ** 2)
    std = np.sqrt(2.0 * np.maximum(quad, 0.0))
    return mean, std, mean + beta * std


@dataclass
class MomentBounds:
    mean_lo: float
    mean_hi: float
    std_lo: float
    std_hi: float
    obj_lo: float
    obj_hi: float
    engine: str
    argmin: dict = field(default_factory=dict)  # quantity -> (mu, sigma)
    argmax: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def interval(self, quantity: str) -> tuple[float, float]:
        return getattr(self, f"{quantity}_lo"), getattr(self, f"{quantity}_hi")

    def encloses(self, other: "MomentBounds", rtol: float = 0.0) -> bool:
        """True if every interval of ``other`` lies inside this one."""
        for q in QUANTITIES:
            lo, hi = self.interval(q)
            olo, ohi = other.interval(q)
            slack = rtol * max(abs(lo), abs(hi))
            if olo < lo - slack or ohi > hi + slack:
                return False
        return True


def _collect(engine: str, mu: np.ndarray, sigma: np.ndarray,
             values: dict[str, np.ndarray], meta=None) -> MomentBounds:
    kw = {}
    argmin, argmax = {}, {}
    for q in QUANTITIES:
        v = values[q]
        i_lo, i_hi = int(np.nanargmin(v)), int(np.nanargmax(v))
        kw[f"{q}_lo"] = float(v[i_lo])
        kw[f"{q}_hi"] = float(v[i_hi])
        argmin[q] = (float(mu[i_lo]), float(sigma[i_lo]))
        argmax[q] = (float(mu[i_hi]), float(sigma[i_hi]))
    return MomentBounds(engine=engine, argmin=argmin, argmax=argmax, meta=meta or {}, **kw)


def ca_bounds(ref: RefCompliance, pbox: PBox, beta: float,
              mode: str = ISSERLIS_FULL) -> MomentBounds:
    """Bounds from the four corners of the ``(mu, sigma)`` box.

    Exact when every moment is monotone in ``|mu|`` and ``sigma``, which
    requires a mean interval that does not contain zero.
    """
    if pbox.mu_lo <= 0.0 <= pbox.mu_hi:
        raise PreconditionViolation(
            f"mean interval [{pbox.mu_lo}, {pbox.mu_hi}] contains zero; corner "
            "enumeration is only exact for a sign-definite mean")
    mu = np.array([pbox.mu_lo, pbox.mu_lo, pbox.mu_hi, pbox.mu_hi])
    sigma = np.array([pbox.sigma_lo, pbox.sigma_hi, pbox.sigma_lo, pbox.sigma_hi])
    mean, std, obj = evaluate_points(ref, mu, sigma, beta, mode)
    return _collect("CA", mu, sigma, {"mean": mean, "std": std, "obj": obj})


def sobol_box_points(n_points: int) -> np.ndarray:
    """Unscrambled 2D Sobol points, skipping 1000 and keeping every 101st."""
    if n_points < 1:
        raise InvalidInputError(f"n_points must be >= 1, got {n_points}")
    engine = qmc.Sobol(d=2, scramble=False)
    engine.fast_forward(SOBOL_SKIP)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        pts = engine.random(SOBOL_STRIDE * (n_points - 1) + 1)
    return pts[::SOBOL_STRIDE]


def _map_box(u: np.ndarray, pbox: PBox) -> tuple[np.ndarray, np.ndarray]:
    mu = pbox.mu_lo + u[:, 0] * (pbox.mu_hi - pbox.mu_lo)
    sigma = pbox.sigma_lo + u[:, 1] * (pbox.sigma_hi - pbox.sigma_lo)
    return mu, sigma


def qmcs_bounds(ref: RefCompliance, pbox: PBox, beta: float, n_points: int = 10_000,
                mode: str = ISSERLIS_FULL) -> MomentBounds:
    """Extremes over a quasi-Monte Carlo scan of the box (an inner estimate)."""
    mu, sigma = _map_box(sobol_box_points(n_points), pbox)
    mean, std, obj = evaluate_points(ref, mu, sigma, beta, mode)
    return _collect("QMCS", mu, sigma, {"mean": mean, "std": std, "obj": obj},
                    {"n_points": n_points, "skip": SOBOL_SKIP, "stride": SOBOL_STRIDE})


@dataclass(frozen=True)
class SwarmConfig:
    n_particles: int = 20
    n_iters: int = 100
    c1: float = 2.0
    c2: float = 2.0
    w_start: float = 0.9
    w_end: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 2 or self.n_iters < 1:
            raise InvalidInputError("swarm needs >= 2 particles and >= 1 iteration")


def _swarm(fun, cfg: SwarmConfig, stream: int, maximize: bool) -> np.ndarray:
    """Minimize (or maximize) ``fun`` over the unit square; returns the best point."""
    sign = -1.0 if maximize else 1.0
    rng = np.random.default_rng([cfg.seed, stream])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        pos = qmc.Sobol(d=2, scramble=True, seed=rng).random(cfg.n_particles)
    vel = rng.uniform(-0.1, 0.1, pos.shape)
    val = sign * fun(pos)
    pbest, pbest_val = pos.copy(), val.copy()
    g = int(np.argmin(val))
    gbest, gbest_val = pos[g].copy(), val[g]
    for t in range(cfg.n_iters):
        frac = t / max(cfg.n_iters - 1, 1)
        w = cfg.w_start + (cfg.w_end - cfg.w_start) * frac
        r1 = rng.random(pos.shape)
        r2 = rng.random(pos.shape)
        vel = w * vel + cfg.c1 * r1 * (pbest - pos) + cfg.c2 * r2 * (gbest - pos)
        vel = np.clip(vel, -1.0, 1.0)
        pos = np.clip(pos + vel, 0.0, 1.0)
        val = sign * fun(pos)
        better = val < pbest_val
        pbest[better] = pos[better]
        pbest_val[better] = val[better]
        g = int(np.argmin(pbest_val))
        if pbest_val[g] < gbest_val:
            gbest, gbest_val = pbest[g].copy(), pbest_val[g]
    return gbest


def pso_bounds(ref: RefCompliance, pbox: PBox, beta: float, cfg: SwarmConfig = SwarmConfig(),
               mode: str = ISSERLIS_FULL) -> MomentBounds:
    """Best extremes found by one minimizing and one maximizing swarm per quantity.

    Particles start from a scrambled Sobol set; the inertia weight decreases
    linearly from ``w_start`` to ``w_end``.
    """
    best_u = []
    for idx in range(len(QUANTITIES)):
        def fun(u, idx=idx):
            mu, sigma = _map_box(u, pbox)
            return evaluate_points(ref, mu, sigma, beta, mode)[idx]

        best_u.append(_swarm(fun, cfg, 2 * idx, maximize=False))
        best_u.append(_swarm(fun, cfg, 2 * idx + 1, maximize=True))
    u = np.array(best_u)
    mu, sigma = _map_box(u, pbox)
    mean, std, obj = evaluate_points(ref, mu, sigma, beta, mode)
    # each quantity is read only at its own two swarm optima
    vals = {}
    for k, (q, v) in enumerate(zip(QUANTITIES, (mean, std, obj))):
        masked = np.full(u.shape[0], np.nan)
        masked[2 * k:2 * k + 2] = v[2 * k:2 * k + 2]
        vals[q] = masked
    meta = {"n_particles": cfg.n_particles, "n_iters": cfg.n_iters, "c1": cfg.c1,
            "c2": cfg.c2, "inertia": f"linear {cfg.w_start}->{cfg.w_end}", "seed": cfg.seed}
    return _collect("PSO", mu, sigma, vals, meta)


@dataclass
class MonotonicityReport:
    signs: dict  # (input, output) -> +1, -1, 0 (flat) or None (sign change)
    slopes: dict  # (input, output) -> array of successive slopes

    @property
    def all_monotone(self) -> bool:
        return all(s is not None for s in self.signs.values())


def _slope_sign(slopes: np.ndarray) -> int | None:
    pos = bool(np.any(slopes > 0))
    neg = bool(np.any(slopes < 0))
    if pos and neg:
        return None
    return 1 if pos else (-1 if neg else 0)


def monotonicity_report(ref: RefCompliance, pbox: PBox, n_sweep: int = 21,
                        mode: str = ISSERLIS_FULL, beta: float = 1.0) -> MonotonicityReport:
    """Finite-difference slope signs of the moments along each box axis.

    Each input is swept over its interval with the other held at its midpoint.
    """
    if n_sweep < 3:
        raise InvalidInputError(f"n_sweep must be >= 3, got {n_sweep}")
    signs, slopes = {}, {}
    sweeps = {
        "mu_f": (np.linspace(pbox.mu_lo, pbox.mu_hi, n_sweep), np.full(n_sweep, pbox.sigma_mid)),
        "sigma_f": (np.full(n_sweep, pbox.mu_mid), np.linspace(pbox.sigma_lo, pbox.sigma_hi, n_sweep)),
    }
    for name, (mu, sigma) in sweeps.items():
        x = mu if name == "mu_f" else sigma
        mean, std, _ = evaluate_points(ref, mu, sigma, beta, mode)
        for out_name, y in (("mean", mean), ("std", std)):
            dx = np.diff(x)
            s = np.divide(np.diff(y), dx, out=np.zeros(n_sweep - 1), where=dx != 0)
            slopes[(name, out_name)] = s
            signs[(name, out_name)] = _slope_sign(s)
    return MonotonicityReport(signs, slopes)
