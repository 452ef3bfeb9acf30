"""Run configuration: INI-style files mapped onto typed dataclasses.

Every section and key is known in advance; anything else is rejected so
typos never pass silently.  The resolved configuration (defaults filled in)
is echoed back in canonical form and hashed for provenance.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError
from .fem import Mesh, SimpParams, cantilever_mesh, carrier_plate_mesh, michell_mesh
from .moments import MODE_ALIASES, VARIANCE_MODES
from .random_field import (ExponentialKernel, KLBasis, PBox, kl_basis,
                           kl_basis_by_significance, pbox_from_samples, pbox_from_stats)

MESH_PRESETS = ("carrier_plate", "cantilever", "michell", "custom")
ENGINES = ("CA", "QMCS", "PSO")
RUN_MODES = ("rto", "dto")
UNCERTAINTY_SOURCES = ("stats", "samples", "direct")


@dataclass(frozen=True)
class MeshConfig:
    preset: str = "carrier_plate"
    nx: int = 60
    ny: int = 60
    elem_size: float = 1.0
    load_start: int | None = None
    load_count: int | None = None
    supports: str = ""
    load_edge: str = ""
    load_dir: str = "0,1"


@dataclass(frozen=True)
class MaterialConfig:
    E0: float = 1.0
    Emin: float = 1e-9
    nu: float = 0.3
    penal: float = 3.0


@dataclass(frozen=True)
class FilterConfig:
    radius: float = 1.5
    alpha_start: float = 1.0
    alpha_factor: float = 2.0
    alpha_every: int = 30
    alpha_max: float = 64.0
    eta_gradient: str = "consistent"  # or "fixed"

    def alpha(self, iteration: int) -> float:
        """Heaviside sharpness at a 1-based iteration."""
        steps = (max(iteration, 1) - 1) // self.alpha_every
        return float(min(self.alpha_max, self.alpha_start * self.alpha_factor ** steps))


@dataclass(frozen=True)
class UncertaintyConfig:
    source: str = ""
    correlation_length: float | None = None
    mean: float | None = None
    std: float | None = None
    n_samples: int | None = None
    ci_level: float = 0.9
    samples: str = ""
    mu_lo: float | None = None
    mu_hi: float | None = None
    sigma_lo: float | None = None
    sigma_hi: float | None = None
    nominal_mean: float | None = None
    M: int | None = None
    s0: float | None = None


@dataclass(frozen=True)
class ObjectiveConfig:
    beta: float = 1.0
    w1: float = 1.0
    w2: float = 0.0
    variance_mode: str = "isserlis-full"


@dataclass(frozen=True)
class BoundsConfig:
    engine: str = "CA"
    qmcs_points: int = 10000
    pso_particles: int = 20
    pso_iters: int = 100
    check_monotonicity: bool = True
    monotonicity_points: int = 21


@dataclass(frozen=True)
class OptimizerConfig:
    volfrac: float = 0.3
    tol_change: float = 0.01
    max_iter: int = 200
    periodic: str = ""
    conservative: bool = True
    move: float = 0.2
    stall_window: int = 20
    stall_tol: float = 1e-6


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    solver: str = "auto"
    mode: str = "rto"


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "rto_out"
    envelopes: bool = True
    envelope_samples: int = 10000
    envelope_grid: int = 200


SECTIONS: dict[str, type] = {
    "mesh": MeshConfig,
    "material": MaterialConfig,
    "filter": FilterConfig,
    "uncertainty": UncertaintyConfig,
    "objective": ObjectiveConfig,
    "bounds": BoundsConfig,
    "optimizer": OptimizerConfig,
    "run": RunSection,
    "output": OutputConfig,
}


def _parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


@dataclass(frozen=True)
class RunConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    run: RunSection = field(default_factory=RunSection)
    output: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        validate(self)

    def with_changes(self, **sections: dict) -> "RunConfig":
        """Copy with some keys replaced, e.g. ``with_changes(objective={"beta": 2})``."""
        kw = {}
        for name, changes in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            current = getattr(self, name)
            names = {f.name for f in dataclasses.fields(current)}
            for key in changes:
                if key not in names:
                    raise ConfigError(f"unknown key {name}.{key}")
            kw[name] = dataclasses.replace(current, **changes)
        return dataclasses.replace(self, **kw)

    # derived objects

    def build_mesh(self) -> Mesh:
        m = self.mesh
        if m.preset == "carrier_plate":
            return carrier_plate_mesh(m.nx, m.ny, m.elem_size)
        if m.preset == "cantilever":
            count = m.load_count if m.load_count is not None else m.ny
            return cantilever_mesh(m.nx, m.ny, count, m.load_start, m.elem_size)
        if m.preset == "michell":
            return michell_mesh(m.nx, m.ny, m.elem_size)
        supports = [s for s in m.supports.split(";") if s.strip()]
        return Mesh.build(m.nx, m.ny, supports, m.load_edge, m.load_start or 0, m.load_count,
                          tuple(_parse_float_list(m.load_dir)), m.elem_size)

    def simp(self) -> SimpParams:
        mat = self.material
        return SimpParams(mat.E0, mat.Emin, mat.nu, mat.penal)

    def pbox(self) -> PBox:
        u = self.uncertainty
        if u.source == "stats":
            return pbox_from_stats(u.mean, u.std, u.n_samples, u.ci_level)
        if u.source == "samples":
            return pbox_from_samples(_parse_float_list(u.samples), u.ci_level)
        return PBox(u.mu_lo, u.mu_hi, u.sigma_lo, u.sigma_hi)

    def nominal_mean(self) -> float:
        """Deterministic load level used by the deterministic baseline."""
        u = self.uncertainty
        if u.nominal_mean is not None:
            return u.nominal_mean
        if u.source == "stats":
            return u.mean
        if u.source == "samples":
            return float(np.mean(_parse_float_list(u.samples)))
        return 0.5 * (u.mu_lo + u.mu_hi)

    def kl_basis(self, mesh: Mesh, sigma: float) -> KLBasis | None:
        """Field basis over the load span at std-dev ``sigma``; ``None`` when ``M = 0``."""
        u = self.uncertainty
        if u.M == 0:
            return None
        kernel = ExponentialKernel(sigma, u.correlation_length, 0.5 * mesh.load_length)
        if u.M is not None:
            return kl_basis(kernel, u.M)
        return kl_basis_by_significance(kernel, u.s0 if u.s0 is not None else 0.9)

    def periodic_cells(self) -> tuple[int, int] | None:
        text = self.optimizer.periodic.strip()
        if not text:
            return None
        parts = [p for p in text.replace("x", ",").split(",") if p.strip()]
        return int(parts[0]), int(parts[1])

    def echo(self) -> str:
        """Canonical resolved configuration text (every key, defaults included)."""
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            sec = getattr(self, name)
            for f in dataclasses.fields(sec):
                lines.append(f"{f.name} = {_format_value(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.echo().encode("utf-8")).hexdigest()


def _format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _need(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def validate(cfg: RunConfig) -> None:
    m = cfg.mesh
    _need(m.preset in MESH_PRESETS, "mesh.preset", f"expected one of {MESH_PRESETS}")
    _need(m.nx >= 1 and m.ny >= 1, "mesh.nx/ny", "must be >= 1")
    _need(m.elem_size > 0, "mesh.elem_size", "must be positive")
    if m.preset == "custom":
        _need(bool(m.supports.strip()), "mesh.supports", "required for the custom preset")
        _need(bool(m.load_edge.strip()), "mesh.load_edge", "required for the custom preset")

    mat = cfg.material
    _need(0 < mat.Emin < mat.E0, "material.Emin", "need 0 < Emin < E0")
    _need(-1 < mat.nu < 0.5, "material.nu", "must lie in (-1, 0.5)")
    _need(mat.penal >= 1, "material.penal", "must be >= 1")

    f = cfg.filter
    _need(f.radius > 0, "filter.radius", "must be positive")
    _need(f.alpha_start >= 0 and f.alpha_max >= 0, "filter.alpha_start", "must be >= 0")
    _need(f.alpha_factor >= 1, "filter.alpha_factor", "must be >= 1")
    _need(f.alpha_every >= 1, "filter.alpha_every", "must be >= 1")
    _need(f.eta_gradient in ("fixed", "consistent"), "filter.eta_gradient",
          "expected 'fixed' or 'consistent'")

    u = cfg.uncertainty
    _need(u.source in UNCERTAINTY_SOURCES, "uncertainty",
          f"block is empty or has no valid 'source' (one of {UNCERTAINTY_SOURCES})")
    _need(u.correlation_length is not None and u.correlation_length > 0,
          "uncertainty.correlation_length", "required and must be positive")
    _need(0 < u.ci_level < 1, "uncertainty.ci_level", "must lie in (0, 1)")
    if u.source == "stats":
        for key in ("mean", "std", "n_samples"):
            _need(getattr(u, key) is not None, f"uncertainty.{key}", "required when source = stats")
    elif u.source == "samples":
        _need(len(_parse_float_list(u.samples)) >= 3, "uncertainty.samples",
              "need at least three comma-separated values")
    else:
        for key in ("mu_lo", "mu_hi", "sigma_lo", "sigma_hi"):
            _need(getattr(u, key) is not None, f"uncertainty.{key}", "required when source = direct")
    _need(not (u.M is not None and u.s0 is not None), "uncertainty.M",
          "give either M or s0, not both")
    _need(u.M is None or u.M >= 0, "uncertainty.M", "must be >= 0")
    _need(u.s0 is None or 0 < u.s0 <= 1, "uncertainty.s0", "must lie in (0, 1]")
    try:
        cfg.pbox()
    except InvalidInputError as exc:
        raise ConfigError(f"uncertainty: {exc}") from exc

    o = cfg.objective
    _need(o.beta >= 0, "objective.beta", "must be >= 0")
    _need(o.w1 >= 0 and o.w2 >= 0 and abs(o.w1 + o.w2 - 1.0) <= 1e-9, "objective.w1/w2",
          f"weights must be non-negative and sum to 1, got {o.w1} + {o.w2}")
    _need(o.variance_mode in VARIANCE_MODES or o.variance_mode in MODE_ALIASES, "objective.variance_mode",
          f"expected one of {VARIANCE_MODES}")

    b = cfg.bounds
    _need(b.engine in ENGINES, "bounds.engine", f"expected one of {ENGINES}")
    _need(b.qmcs_points >= 1, "bounds.qmcs_points", "must be >= 1")
    _need(b.pso_particles >= 2 and b.pso_iters >= 1, "bounds.pso_particles", "need >= 2 particles")
    _need(b.monotonicity_points >= 3, "bounds.monotonicity_points", "must be >= 3")

    op = cfg.optimizer
    _need(0 < op.volfrac < 1, "optimizer.volfrac", "must lie in (0, 1)")
    _need(op.tol_change > 0, "optimizer.tol_change", "must be positive")
    _need(op.max_iter >= 0, "optimizer.max_iter", "must be >= 0")
    _need(0 < op.move <= 1, "optimizer.move", "must lie in (0, 1]")
    _need(op.stall_window >= 2, "optimizer.stall_window", "must be >= 2")
    try:
        cells = cfg.periodic_cells()
    except (ValueError, IndexError):
        raise ConfigError("optimizer.periodic: expected 'Nx,Ny'") from None
    if cells is not None:
        _need(cells[0] >= 1 and cells[1] >= 1, "optimizer.periodic", "cell counts must be >= 1")
        _need(m.nx % cells[0] == 0 and m.ny % cells[1] == 0, "optimizer.periodic",
              f"{cells[0]}x{cells[1]} cells do not divide the {m.nx}x{m.ny} mesh")

    r = cfg.run
    _need(r.mode in RUN_MODES, "run.mode", f"expected one of {RUN_MODES}")
    _need(r.solver in ("auto", "direct", "cg"), "run.solver", "expected auto, direct or cg")
    _need(r.seed >= 0, "run.seed", "must be >= 0")

    out = cfg.output
    _need(out.envelope_samples >= 100, "output.envelope_samples", "must be >= 100")
    _need(out.envelope_grid >= 2, "output.envelope_grid", "must be >= 2")


def _convert(raw: str, hint, path: str):
    text = raw.strip()
    args = typing.get_args(hint)
    if args and type(None) in args:
        if text == "" or text.lower() == "none":
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text
    except ValueError:
        raise ConfigError(f"{path}: cannot read {raw!r} as {hint.__name__}") from None


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       default_section="__none__")
    parser.optionxform = str  # keys are case-sensitive (M vs m)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    kw = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = SECTIONS[name]
        hints = typing.get_type_hints(cls)
        values = {}
        for key, raw in parser.items(name):
            if key not in hints:
                raise ConfigError(f"unknown key {name}.{key}")
            values[key] = _convert(raw, hints[key], f"{name}.{key}")
        if name == "uncertainty" and not values:
            raise ConfigError("uncertainty: block is empty")
        kw[name] = cls(**values)
    if "uncertainty" not in kw:
        raise ConfigError("uncertainty: block is missing")
    return RunConfig(**kw)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``carrier_plate_desk``."""
    stem = name[:-4] if name.endswith(".cfg") else name
    path = Path(str(resources.files("imprecise_rto") / "configs" / f"{stem}.cfg"))
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


def load_config(name_or_path) -> RunConfig:
    """Parse a file path, falling back to a bundled config name."""
    p = Path(name_or_path)
    if p.is_file():
        return parse_config(p)
    return parse_config(bundled_config_path(str(name_or_path)))
