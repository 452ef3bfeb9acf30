"""Plane-stress bilinear-quadrilateral finite elements on a regular grid.

Node ``(i, j)`` (``i`` along x, ``j`` along y, origin bottom-left) has id
``j * (nx + 1) + i`` and dofs ``2 id`` (x) and ``2 id + 1`` (y).  Element
``(i, j)`` has id ``j * nx + i``; its nodes run counter-clockwise from the
lower-left corner.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidInputError, NumericalError, StructuralError
from .random_field import KLBasis

log = logging.getLogger(__name__)

EDGES = ("bottom", "top", "left", "right")
CORNERS = {"bl": (0, 0), "br": (1, 0), "tl": (0, 1), "tr": (1, 1)}

DIRECT_SOLVER_MAX_ELEMENTS = 250 * 250
_RESIDUAL_TOL = 1e-8


def edge_nodes(nx: int, ny: int, edge: str) -> np.ndarray:
    """Node ids along an edge; bottom/top run left to right, left/right bottom to top."""
    if edge == "bottom":
        return np.arange(nx + 1)
    if edge == "top":
        return ny * (nx + 1) + np.arange(nx + 1)
    if edge == "left":
        return np.arange(ny + 1) * (nx + 1)
    if edge == "right":
        return np.arange(ny + 1) * (nx + 1) + nx
    raise InvalidInputError(f"unknown edge {edge!r}; expected one of {EDGES}")


def _components(text: str) -> list[int]:
    comps = [{"x": 0, "y": 1}.get(ch) for ch in text]
    if not comps or None in comps:
        raise InvalidInputError(f"bad dof components {text!r}; use x, y or xy")
    return comps


def supports_to_dofs(nx: int, ny: int, items: Iterable[str]) -> np.ndarray:
    """Translate support descriptors into constrained dof ids.

    Accepted forms: ``"<edge>:<comps>"`` (e.g. ``bottom:xy``),
    ``"corner:<bl|br|tl|tr>:<comps>"`` and ``"dofs:<i>,<j>,..."``.
    """
    dofs: list[int] = []
    for item in items:
        parts = [p.strip() for p in item.strip().split(":")]
        if parts[0] in EDGES and len(parts) == 2:
            nodes = edge_nodes(nx, ny, parts[0])
            dofs.extend(int(2 * n + c) for n in nodes for c in _components(parts[1]))
        elif parts[0] == "corner" and len(parts) == 3 and parts[1] in CORNERS:
            ci, cj = CORNERS[parts[1]]
            node = (cj * ny) * (nx + 1) + ci * nx
            dofs.extend(2 * node + c for c in _components(parts[2]))
        elif parts[0] == "dofs" and len(parts) == 2:
            dofs.extend(int(v) for v in parts[1].split(",") if v.strip())
        else:
            raise InvalidInputError(f"cannot parse support {item!r}")
    return np.unique(np.asarray(dofs, dtype=np.int64))


@dataclass(frozen=True)
class Mesh:
    """Regular grid plus supports and the edge span that carries the field load."""

    nx: int
    ny: int
    fixed_dofs: np.ndarray
    load_nodes: np.ndarray
    load_dir: tuple[float, float] = (0.0, 1.0)
    elem_size: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise InvalidInputError(f"need nx, ny >= 1, got {self.nx}x{self.ny}")
        if self.elem_size <= 0:
            raise InvalidInputError("elem_size must be positive")
        fixed = np.asarray(self.fixed_dofs, dtype=np.int64)
        if fixed.size == 0:
            raise InvalidInputError("mesh needs at least one constrained dof")
        if fixed.min() < 0 or fixed.max() >= self.n_dofs:
            raise InvalidInputError("constrained dof id out of range")
        object.__setattr__(self, "fixed_dofs", np.unique(fixed))
        nodes = np.asarray(self.load_nodes, dtype=np.int64)
        if nodes.size < 2:
            raise InvalidInputError("load edge needs at least two nodes")
        object.__setattr__(self, "load_nodes", nodes)
        d = np.asarray(self.load_dir, dtype=float)
        norm = np.linalg.norm(d)
        if norm == 0:
            raise InvalidInputError("load direction must be non-zero")
        object.__setattr__(self, "load_dir", tuple(float(v) for v in d / norm))

    @classmethod
    def build(cls, nx: int, ny: int, supports: Sequence[str], load_edge: str,
              load_start: int = 0, load_count: int | None = None,
              load_dir=(0.0, 1.0), elem_size: float = 1.0) -> "Mesh":
        """Mesh from support descriptors and a contiguous span of an edge.

        ``load_start`` and ``load_count`` count elements along the edge in its
        node order (see :func:`edge_nodes`).
        """
        nodes = edge_nodes(nx, ny, load_edge)
        n_el = nodes.size - 1
        count = n_el - load_start if load_count is None else load_count
        if load_start < 0 or count < 1 or load_start + count > n_el:
            raise InvalidInputError(
                f"load span start={load_start}, count={count} does not fit the "
                f"{load_edge} edge of {n_el} elements")
        return cls(nx, ny, supports_to_dofs(nx, ny, supports),
                   nodes[load_start:load_start + count + 1], tuple(load_dir), elem_size)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_elem(self) -> int:
        return self.nx * self.ny

    @property
    def elem_volume(self) -> float:
        return self.elem_size ** 2

    @property
    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_dofs), self.fixed_dofs)

    @property
    def edof(self) -> np.ndarray:
        """``(n_elem, 8)`` dof ids per element."""
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        n0 = (j * (self.nx + 1) + i).ravel()
        nodes = np.stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1], axis=1)
        return np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 8)

    @property
    def element_centers(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.stack([(i.ravel() + 0.5), (j.ravel() + 0.5)], axis=1) * self.elem_size

    @property
    def node_coords(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1))
        return np.stack([i.ravel(), j.ravel()], axis=1) * self.elem_size

    @property
    def load_length(self) -> float:
        return (self.load_nodes.size - 1) * self.elem_size

    @property
    def load_coords(self) -> np.ndarray:
        """Load-edge node positions mapped onto ``[-a, a]`` with ``a = length / 2``."""
        s = np.arange(self.load_nodes.size) * self.elem_size
        return s - 0.5 * self.load_length


def carrier_plate_mesh(nx: int, ny: int, elem_size: float = 1.0) -> Mesh:
    """Bottom edge clamped, field load over the whole top edge, vertical."""
    return Mesh.build(nx, ny, ["bottom:xy"], "top", elem_size=elem_size)


def cantilever_mesh(nx: int, ny: int, load_count: int, load_start: int | None = None,
                    elem_size: float = 1.0) -> Mesh:
    """Right edge clamped, vertical field load on a span of the left edge.

    The span defaults to the top ``load_count`` elements of the left edge.
    """
    start = ny - load_count if load_start is None else load_start
    return Mesh.build(nx, ny, ["right:xy"], "left", start, load_count, elem_size=elem_size)


def michell_mesh(nx: int, ny: int, elem_size: float = 1.0) -> Mesh:
    """Both bottom corners pinned, vertical field load along the bottom edge."""
    return Mesh.build(nx, ny, ["corner:bl:xy", "corner:br:xy"], "bottom",
                      elem_size=elem_size)


@dataclass(frozen=True)
class SimpParams:
    E0: float = 1.0
    Emin: float = 1e-9
    nu: float = 0.3
    penal: float = 3.0

    def __post_init__(self):
        if not 0 < self.Emin < self.E0:
            raise InvalidInputError(f"need 0 < Emin < E0, got Emin={self.Emin}, E0={self.E0}")
        if self.penal < 1:
            raise InvalidInputError(f"penalization must be >= 1, got {self.penal}")
        if not -1.0 < self.nu < 0.5:
            raise InvalidInputError(f"Poisson ratio out of range: {self.nu}")

    def modulus(self, rho: np.ndarray) -> np.ndarray:
        return self.Emin + (self.E0 - self.Emin) * np.asarray(rho) ** self.penal

    def modulus_derivative(self, rho: np.ndarray) -> np.ndarray:
        return self.penal * (self.E0 - self.Emin) * np.asarray(rho) ** (self.penal - 1)


def element_stiffness(nu: float, E: float = 1.0) -> np.ndarray:
    """Exact plane-stress stiffness of a unit-thickness square bilinear element."""
    k = np.array([1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
                  -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8])
    idx = np.array([[0, 1, 2, 3, 4, 5, 6, 7],
                    [1, 0, 7, 6, 5, 4, 3, 2],
                    [2, 7, 0, 5, 6, 3, 4, 1],
                    [3, 6, 5, 0, 7, 2, 1, 4],
                    [4, 5, 6, 7, 0, 1, 2, 3],
                    [5, 4, 3, 2, 1, 0, 7, 6],
                    [6, 3, 4, 1, 2, 7, 0, 5],
                    [7, 2, 1, 4, 3, 6, 5, 0]])
    return E / (1 - nu ** 2) * k[idx]


def _check_constraints(mesh: Mesh) -> None:
    # the three rigid-body modes restricted to the fixed dofs must have rank 3
    xy = mesh.node_coords
    node = mesh.fixed_dofs // 2
    comp = mesh.fixed_dofs % 2
    R = np.zeros((mesh.fixed_dofs.size, 3))
    R[:, 0] = comp == 0
    R[:, 1] = comp == 1
    R[:, 2] = np.where(comp == 0, -xy[node, 1], xy[node, 0])
    if np.linalg.matrix_rank(R) < 3:
        raise StructuralError(
            f"supports leave rigid-body motion free (rank {np.linalg.matrix_rank(R)} of 3 "
            f"over {mesh.fixed_dofs.size} constrained dofs)")


class FactoredStiffness:
    """Global stiffness with supports eliminated, ready for repeated solves."""

    def __init__(self, mesh: Mesh, K: sp.csr_matrix, solver: str):
        self.mesh = mesh
        self.K = K
        self.free = mesh.free_dofs
        self.K_free = K[self.free][:, self.free].tocsc()
        self.solver = solver
        if solver == "direct":
            try:
                self._lu = spla.splu(self.K_free)
            except RuntimeError as exc:
                raise StructuralError(f"stiffness matrix is singular: {exc}") from exc
        elif solver == "cg":
            self._precond = sp.diags(1.0 / self.K_free.diagonal())
        else:
            raise InvalidInputError(f"unknown solver {solver!r}")

    def _solve_free(self, F: np.ndarray) -> np.ndarray:
        if self.solver == "direct":
            U = self._lu.solve(F)
            R = F - self.K_free @ U
            # one step of iterative refinement for badly scaled (near-void) designs
            if np.any(np.linalg.norm(R, axis=0) > _RESIDUAL_TOL * np.linalg.norm(F, axis=0)):
                U = U + self._lu.solve(R)
            return U
        U = np.zeros_like(F)
        for k in range(F.shape[1]):
            if not np.any(F[:, k]):
                continue
            U[:, k], info = spla.cg(self.K_free, F[:, k], rtol=_RESIDUAL_TOL, atol=0.0,
                                    M=self._precond, maxiter=20 * F.shape[0])
            if info != 0:
                res = np.linalg.norm(F[:, k] - self.K_free @ U[:, k]) / np.linalg.norm(F[:, k])
                raise NumericalError(f"CG did not converge for case {k}: relative residual {res:.3e}")
        return U

    def solve(self, F: np.ndarray) -> np.ndarray:
        """Solve ``K U = F`` for one vector or an ``(n_dofs, k)`` block."""
        F = np.asarray(F, dtype=float)
        single = F.ndim == 1
        Fb = F[:, None] if single else F
        U = np.zeros_like(Fb)
        U[self.free] = self._solve_free(Fb[self.free])
        return U[:, 0] if single else U


def assemble_stiffness(mesh: Mesh, rho_phys: np.ndarray, params: SimpParams) -> sp.csr_matrix:
    rho = np.asarray(rho_phys, dtype=float)
    if rho.shape != (mesh.n_elem,):
        raise InvalidInputError(f"expected {mesh.n_elem} densities, got shape {rho.shape}")
    if np.any(rho < 0) or np.any(rho > 1):
        raise InvalidInputError("densities must lie in [0, 1]")
    KE = element_stiffness(params.nu)
    edof = mesh.edof
    rows = np.repeat(edof, 8, axis=1).ravel()
    cols = np.tile(edof, (1, 8)).ravel()
    vals = (params.modulus(rho)[:, None] * KE.ravel()[None, :]).ravel()
    K = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    return ((K + K.T) * 0.5).tocsr()


def assemble_and_factor(mesh: Mesh, rho_phys: np.ndarray, params: SimpParams,
                        solver: str = "auto") -> FactoredStiffness:
    """Assemble with ``E_e = Emin + (E0 - Emin) rho_e^p`` and factor."""
    _check_constraints(mesh)
    K = assemble_stiffness(mesh, rho_phys, params)
    if solver == "auto":
        solver = "direct" if mesh.n_elem <= DIRECT_SOLVER_MAX_ELEMENTS else "cg"
    return FactoredStiffness(mesh, K, solver)


@dataclass(frozen=True)
class LoadCaseSet:
    """Column 0 is the mean-load case, column ``i >= 1`` is mode ``i`` of the field."""

    F: np.ndarray  # (n_dofs, M + 1)
    mu_ref: float
    sigma_ref: float

    @property
    def n_cases(self) -> int:
        return self.F.shape[1]

    @property
    def M(self) -> int:
        return self.F.shape[1] - 1


def lumping_weights(mesh: Mesh) -> np.ndarray:
    """Trapezoidal tributary lengths of the load-edge nodes."""
    w = np.full(mesh.load_nodes.size, mesh.elem_size)
    w[0] = w[-1] = 0.5 * mesh.elem_size
    return w


def lump_line_load(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Nodal force vector(s) of a line load sampled at the load-edge nodes.

    ``values`` is ``(n_load_nodes,)`` or ``(k, n_load_nodes)``; the result is
    ``(n_dofs,)`` or ``(n_dofs, k)``.
    """
    values = np.asarray(values, dtype=float)
    single = values.ndim == 1
    vals = values[None, :] if single else values
    if vals.shape[1] != mesh.load_nodes.size:
        raise InvalidInputError("line-load samples do not match the load-edge nodes")
    nodal = vals * lumping_weights(mesh)[None, :]
    F = np.zeros((mesh.n_dofs, vals.shape[0]))
    for c, d in enumerate(mesh.load_dir):
        if d != 0.0:
            F[2 * mesh.load_nodes + c] = d * nodal.T
    return F[:, 0] if single else F


def build_load_cases(mesh: Mesh, basis: KLBasis, mu_ref: float,
                     sigma_ref: float | None = None) -> LoadCaseSet:
    """Superposition load cases ``f_0 = mu_ref``, ``f_i = sqrt(lambda_i) psi_i``.

    When ``sigma_ref`` is given the basis is rescaled to that std-dev first.
    """
    if abs(mesh.load_length - 2 * basis.a) > 1e-9 * max(1.0, 2 * basis.a):
        raise InvalidInputError(
            f"load edge length {mesh.load_length} does not match field domain 2a={2 * basis.a}")
    if sigma_ref is not None and sigma_ref != basis.sigma:
        basis = basis.scaled(sigma_ref)
    x = mesh.load_coords
    modes = np.sqrt(basis.lambdas)[:, None] * basis.eigenfunctions(x)
    lines = np.vstack([np.full(x.size, float(mu_ref)), modes])
    return LoadCaseSet(lump_line_load(mesh, lines), float(mu_ref), float(basis.sigma))


def solve_cases(fac: FactoredStiffness, loads: LoadCaseSet) -> np.ndarray:
    """Displacements for every load case, ``(n_dofs, M + 1)``."""
    if loads.F.shape[0] != fac.mesh.n_dofs:
        raise InvalidInputError("load vectors do not match the mesh")
    return fac.solve(loads.F)


def compliance_matrix(loads: LoadCaseSet, U: np.ndarray) -> np.ndarray:
    """Symmetrized ``c_ij = f_i . u_j``."""
    if U.shape != loads.F.shape:
        raise InvalidInputError(f"displacements {U.shape} do not match loads {loads.F.shape}")
    C = loads.F.T @ U
    return 0.5 * (C + C.T)
