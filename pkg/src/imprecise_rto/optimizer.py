"""Robust topology optimization loop.

Per iteration: filter and project the design, solve the load cases once at
reference load parameters, bound the compliance moments over the p-box,
differentiate the weighted bound objective at its achieving corners, map
the gradient through the filter chain and take one MMA step.
"""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .bounds import (MomentBounds, RefCompliance, SwarmConfig, ca_bounds, monotonicity_report,
                     pso_bounds, qmcs_bounds)
from .config import RunConfig
from .errors import InvalidInputError
from .fem import (LoadCaseSet, Mesh, assemble_and_factor, build_load_cases, compliance_matrix,
                  lump_line_load, solve_cases)
from .filters import (FilterState, build_filter, filter_chain_sensitivity, heaviside_project,
                      linear_filter, volume_constraint, volume_fraction)
from .mma import MmaState, mma_update
from .random_field import KLBasis, PBox
from .sensitivity import bound_sensitivity, interval_sensitivity

log = logging.getLogger(__name__)

CONVERGED = "converged"
CONTINUE = "continue"
STALLED = "stalled"
MAX_ITER = "max_iter"

HISTORY_COLUMNS = ("iter", "J_lo", "J_hi", "mu_lo", "mu_hi", "sigma_lo", "sigma_hi",
                   "volfrac", "max_change")
_VOLUME_SLACK = 1e-6


@dataclass(frozen=True)
class HistoryRecord:
    iter: int
    J_lo: float
    J_hi: float
    mu_lo: float
    mu_hi: float
    sigma_lo: float
    sigma_hi: float
    volfrac: float
    max_change: float
    alpha: float = 1.0
    engine: str = "CA"

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in HISTORY_COLUMNS)


@dataclass
class DesignState:
    rho: np.ndarray  # design variables (one cell in periodic mode)
    rho_bar: np.ndarray
    rho_phys: np.ndarray  # full mesh
    iter: int = 0
    history: list[HistoryRecord] = field(default_factory=list)
    status: str = CONTINUE
    eta: float = 0.5
    alpha: float = 1.0

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


@dataclass(frozen=True)
class PeriodicLayout:
    """``Nx x Ny`` identical cells of ``nx x ny`` elements each."""

    Nx: int
    Ny: int
    nx: int
    ny: int

    def __post_init__(self):
        if min(self.Nx, self.Ny, self.nx, self.ny) < 1:
            raise InvalidInputError("periodic layout counts must be >= 1")

    @classmethod
    def for_mesh(cls, mesh_nx: int, mesh_ny: int, Nx: int, Ny: int) -> "PeriodicLayout":
        if mesh_nx % Nx or mesh_ny % Ny:
            raise InvalidInputError(
                f"{Nx}x{Ny} cells do not divide a {mesh_nx}x{mesh_ny} mesh")
        return cls(Nx, Ny, mesh_nx // Nx, mesh_ny // Ny)

    @property
    def n_cell(self) -> int:
        return self.nx * self.ny


def periodic_expand(cell: np.ndarray, layout: PeriodicLayout) -> np.ndarray:
    """Tile one cell's element values over the whole mesh."""
    cell = np.asarray(cell)
    if cell.size != layout.n_cell:
        raise InvalidInputError(f"cell has {cell.size} values, layout needs {layout.n_cell}")
    return np.tile(cell.reshape(layout.ny, layout.nx), (layout.Ny, layout.Nx)).ravel()


def periodic_reduce(values: np.ndarray, layout: PeriodicLayout) -> np.ndarray:
    """Sum element values over corresponding positions of all cells."""
    values = np.asarray(values)
    n = layout.n_cell * layout.Nx * layout.Ny
    if values.size != n:
        raise InvalidInputError(f"field has {values.size} values, layout covers {n}")
    return values.reshape(layout.Ny, layout.ny, layout.Nx, layout.nx).sum(axis=(0, 2)).ravel()


def cells_identical(rho_full: np.ndarray, layout: PeriodicLayout) -> bool:
    blocks = np.asarray(rho_full).reshape(layout.Ny, layout.ny, layout.Nx, layout.nx)
    first = blocks[0, :, 0, :]
    return all(np.array_equal(blocks[J, :, I, :], first)
               for J in range(layout.Ny) for I in range(layout.Nx))


def convergence_check(history: list[HistoryRecord], tol_change: float = 0.01,
                      volfrac: float | None = None, stall_window: int = 20,
                      stall_tol: float = 1e-6) -> str:
    """Classify the run from its history.

    ``converged`` needs the last design change below ``tol_change`` and, when
    ``volfrac`` is given, a feasible volume.  ``stalled`` means both objective
    bounds stayed within ``stall_tol`` (relative) over ``stall_window`` rows.
    """
    if not history:
        raise InvalidInputError("convergence check needs at least one iteration")
    last = history[-1]
    feasible = volfrac is None or last.volfrac <= volfrac + _VOLUME_SLACK
    if last.max_change < tol_change and feasible:
        return CONVERGED
    if len(history) >= stall_window:
        recent = history[-stall_window:]
        flat = True
        for key in ("J_lo", "J_hi"):
            vals = np.array([getattr(h, key) for h in recent])
            scale = max(float(np.max(np.abs(vals))), 1e-300)
            flat &= float(np.ptp(vals)) <= stall_tol * scale
        if flat:
            return STALLED
    return CONTINUE


def reference_point(pbox: PBox) -> tuple[float, float]:
    """Load parameters at which the finite element solves are done."""
    mu_ref = pbox.mu_mid
    if mu_ref == 0.0:
        mu_ref = pbox.mu_hi if abs(pbox.mu_hi) >= abs(pbox.mu_lo) else pbox.mu_lo
    if mu_ref == 0.0:
        mu_ref = 1.0
    sigma_ref = pbox.sigma_mid if pbox.sigma_mid > 0 else 1.0
    return float(mu_ref), float(sigma_ref)


def make_load_cases(mesh: Mesh, basis: KLBasis | None, mu_ref: float,
                    sigma_ref: float) -> LoadCaseSet:
    if basis is None:
        F = lump_line_load(mesh, np.full(mesh.load_nodes.size, mu_ref))[:, None]
        return LoadCaseSet(F, mu_ref, sigma_ref)
    return build_load_cases(mesh, basis, mu_ref, sigma_ref)


def deterministic_variant(cfg: RunConfig) -> RunConfig:
    """Same problem with a single deterministic load at the nominal mean."""
    mu = cfg.nominal_mean()
    return cfg.with_changes(
        objective={"beta": 0.0, "w1": 1.0, "w2": 0.0},
        uncertainty={"source": "direct", "mu_lo": mu, "mu_hi": mu, "sigma_lo": 0.0,
                     "sigma_hi": 0.0, "nominal_mean": mu, "M": 0, "s0": None},
        run={"mode": "rto"})


@dataclass
class Analysis:
    """Finite element response and bounds of one physical design."""

    U: np.ndarray
    ref: RefCompliance
    bounds: MomentBounds
    J: float


@dataclass
class RunArtifacts:
    config: RunConfig
    mesh: Mesh
    pbox: PBox
    basis: KLBasis | None
    loads: LoadCaseSet
    ref: RefCompliance
    layout: PeriodicLayout | None
    status: str
    wall_time: float
    meta: dict = field(default_factory=dict)


class Problem:
    """Everything fixed for the duration of a run."""

    def __init__(self, cfg: RunConfig):
        if cfg.run.mode == "dto":
            cfg = deterministic_variant(cfg)
        self.cfg = cfg
        self.mesh = cfg.build_mesh()
        self.params = cfg.simp()
        self.pbox = cfg.pbox()
        self.mu_ref, self.sigma_ref = reference_point(self.pbox)
        self.basis = cfg.kl_basis(self.mesh, self.sigma_ref)
        self.loads = make_load_cases(self.mesh, self.basis, self.mu_ref, self.sigma_ref)
        cells = cfg.periodic_cells()
        self.layout = (None if cells is None else
                       PeriodicLayout.for_mesh(self.mesh.nx, self.mesh.ny, *cells))
        h = self.mesh.elem_size
        if self.layout is None:
            self.filter = build_filter(self.mesh.nx, self.mesh.ny, cfg.filter.radius, h)
        else:
            self.filter = build_filter(self.layout.nx, self.layout.ny, cfg.filter.radius, h,
                                       periodic=True)
        self.swarm = SwarmConfig(cfg.bounds.pso_particles, cfg.bounds.pso_iters,
                                 seed=cfg.run.seed)
        self.engine_log: list[str] = []

    @property
    def n_design(self) -> int:
        return self.filter.n

    def physical(self, x: np.ndarray, alpha: float):
        """``(rho_bar, rho_phys_design, eta, rho_phys_full)`` for design variables ``x``."""
        rho_bar = linear_filter(x, self.filter)
        rho_phys, eta = heaviside_project(rho_bar, alpha, self.filter.volumes)
        full = rho_phys if self.layout is None else periodic_expand(rho_phys, self.layout)
        return rho_bar, rho_phys, eta, full

    def bounds(self, ref: RefCompliance) -> MomentBounds:
        b, o = self.cfg.bounds, self.cfg.objective
        engine = b.engine
        if engine == "CA":
            if self.pbox.straddles_zero and self.pbox.mu_lo != self.pbox.mu_hi:
                engine = "QMCS"
            elif b.check_monotonicity:
                rep = monotonicity_report(ref, self.pbox, b.monotonicity_points,
                                          o.variance_mode, o.beta)
                if not rep.all_monotone:
                    engine = "QMCS"
            if engine != "CA":
                log.warning("corner enumeration not justified here; using QMCS")
        if engine == "CA":
            return ca_bounds(ref, self.pbox, o.beta, o.variance_mode)
        if engine == "QMCS":
            return qmcs_bounds(ref, self.pbox, o.beta, b.qmcs_points, o.variance_mode)
        return pso_bounds(ref, self.pbox, o.beta, self.swarm, o.variance_mode)

    def analyze(self, rho_full: np.ndarray) -> Analysis:
        fac = assemble_and_factor(self.mesh, rho_full, self.params, self.cfg.run.solver)
        U = solve_cases(fac, self.loads)
        ref = RefCompliance(compliance_matrix(self.loads, U), self.mu_ref, self.sigma_ref)
        bnd = self.bounds(ref)
        o = self.cfg.objective
        return Analysis(U, ref, bnd, o.w1 * bnd.obj_hi + o.w2 * bnd.obj_lo)

    def gradient(self, an: Analysis, rho_full: np.ndarray) -> np.ndarray:
        """Gradient of ``w1 J_hi + w2 J_lo`` with respect to the full physical field."""
        o = self.cfg.objective

        def at(point):
            return bound_sensitivity(an.ref, an.U, point, o.beta, o.variance_mode,
                                     rho_full, self.params, self.mesh).dJ

        zero = np.zeros(self.mesh.n_elem)
        up = at(an.bounds.argmax["obj"]) if o.w1 > 0 else zero
        lo = at(an.bounds.argmin["obj"]) if o.w2 > 0 else zero
        return interval_sensitivity(up, lo, o.w1, o.w2)

    def design_gradient(self, dJ_full: np.ndarray, rho_bar: np.ndarray, alpha: float,
                        eta: float) -> np.ndarray:
        g = dJ_full if self.layout is None else periodic_reduce(dJ_full, self.layout)
        return filter_chain_sensitivity(g, self.filter, rho_bar, alpha, eta,
                                        self.cfg.filter.eta_gradient == "consistent")


def run_rto(cfg: RunConfig, callback=None):
    """Run the optimization.

    Returns ``(state, bounds, artifacts)`` where ``bounds`` belong to the
    returned design.  ``callback(record, state)`` is called after every
    iteration; at that point ``state.rho_phys`` is the design just analyzed
    and ``state.rho`` already holds the next design variables.
    """
    t0 = time.perf_counter()
    prob = Problem(cfg)
    opt = cfg.optimizer
    x = np.full(prob.n_design, opt.volfrac)
    mma = MmaState(prob.n_design, move=opt.move)
    state = DesignState(x, x.copy(), np.full(prob.mesh.n_elem, opt.volfrac))
    scale = None
    corner_switches = 0
    last_corner = None
    status = CONTINUE
    for k in range(1, opt.max_iter + 1):
        alpha = cfg.filter.alpha(k)
        rho_bar, rho_phys, eta, full = prob.physical(x, alpha)
        an = prob.analyze(full)
        if scale is None:
            scale = abs(an.J) if an.J != 0 else 1.0
        corner = an.bounds.argmax["obj"]
        if last_corner is not None and corner != last_corner:
            corner_switches += 1
        last_corner = corner

        dJ = prob.design_gradient(prob.gradient(an, full), rho_bar, alpha, eta) / scale
        g, dg = volume_constraint(rho_bar, prob.filter, opt.volfrac)
        x_new = _step(prob, mma, x, dJ, g, dg, an.J, alpha, opt.conservative)
        change = float(np.max(np.abs(x_new - x)))
        b = an.bounds
        rec = HistoryRecord(k, b.obj_lo, b.obj_hi, b.mean_lo, b.mean_hi, b.std_lo, b.std_hi,
                            volume_fraction(full, np.full(full.size, prob.mesh.elem_volume)),
                            change, alpha, b.engine)
        state.history.append(rec)
        state.iter = k
        state.rho_bar, state.rho_phys, state.eta, state.alpha = rho_bar, full, eta, alpha
        x = x_new
        state.rho = x
        if callback is not None:
            callback(rec, state)
        vol_next = volume_constraint(linear_filter(x, prob.filter), prob.filter, opt.volfrac)[0]
        status = convergence_check(state.history, opt.tol_change, None,
                                   opt.stall_window, opt.stall_tol)
        if status == CONVERGED and vol_next > _VOLUME_SLACK:
            status = CONTINUE
        if status != CONTINUE:
            break
    if status == CONTINUE:
        status = MAX_ITER if opt.max_iter > 0 else CONTINUE

    alpha = cfg.filter.alpha(max(state.iter, 1))
    rho_bar, rho_phys, eta, full = prob.physical(x, alpha)
    final = prob.analyze(full)
    state.rho_bar, state.rho_phys, state.eta, state.alpha = rho_bar, full, eta, alpha
    state.status = status
    if status != CONVERGED:
        log.warning("run stopped without convergence (%s) after %d iterations", status, state.iter)
    arts = RunArtifacts(cfg, prob.mesh, prob.pbox, prob.basis, prob.loads, final.ref,
                        prob.layout, status, time.perf_counter() - t0,
                        {"corner_switches": corner_switches, "mu_ref": prob.mu_ref,
                         "sigma_ref": prob.sigma_ref,
                         "M": 0 if prob.basis is None else prob.basis.M,
                         "alpha_schedule": (f"{cfg.filter.alpha_start} x {cfg.filter.alpha_factor}"
                                            f" every {cfg.filter.alpha_every}, cap "
                                            f"{cfg.filter.alpha_max}"),
                         "final_J": final.J})
    return state, final.bounds, arts


def _step(prob: Problem, mma: MmaState, x, dJ, g, dg, J, alpha, conservative: bool):
    if not conservative:
        return mma_update(mma, x, dJ, g, dg)
    tighten = 1.0
    for attempt in range(5):
        trial = copy.deepcopy(mma)
        x_new = mma_update(trial, x, dJ, g, dg, tighten)
        if attempt == 4:
            break
        J_new = prob.analyze(prob.physical(x_new, alpha)[3]).J
        if J_new <= J * (1 + 1e-9):
            break
        tighten *= 0.5
    mma.__dict__.update(trial.__dict__)
    return x_new


def evaluate_design(cfg: RunConfig, rho_phys: np.ndarray) -> MomentBounds:
    """Bounds of a fixed physical design under ``cfg``'s p-box."""
    prob = Problem(cfg)
    return prob.analyze(np.asarray(rho_phys, dtype=float)).bounds
