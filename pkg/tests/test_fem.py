import numpy as np
import pytest

from imprecise_rto.bounds import scale_compliance
from imprecise_rto.errors import InvalidInputError, StructuralError
from imprecise_rto.fem import (Mesh, SimpParams, assemble_and_factor, assemble_stiffness,
                               build_load_cases, cantilever_mesh, carrier_plate_mesh,
                               compliance_matrix, edge_nodes, element_stiffness,
                               lump_line_load, michell_mesh, solve_cases)
from imprecise_rto.random_field import ExponentialKernel, kl_basis


def gauss_element_stiffness(nu, E=1.0):
    """2x2 Gauss integration of B^T D B over the unit square."""
    D = E / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    g = 1 / np.sqrt(3)
    K = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            dN = np.array([corners[:, 0] * (1 + corners[:, 1] * eta),
                           corners[:, 1] * (1 + corners[:, 0] * xi)]) / 4
            dN *= 2.0  # map [-1, 1] onto a unit element
            B = np.zeros((3, 8))
            B[0, 0::2] = dN[0]
            B[1, 1::2] = dN[1]
            B[2, 0::2] = dN[1]
            B[2, 1::2] = dN[0]
            K += B.T @ D @ B * 0.25
    return K


@pytest.mark.parametrize("nu", [0.0, 0.3, 0.45])
def test_element_stiffness_matches_quadrature(nu):
    assert np.allclose(element_stiffness(nu), gauss_element_stiffness(nu), atol=1e-14)


def test_element_stiffness_rigid_modes():
    KE = element_stiffness(0.3)
    xy = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    modes = [np.tile([1.0, 0.0], 4), np.tile([0.0, 1.0], 4),
             np.column_stack([-xy[:, 1], xy[:, 0]]).ravel()]
    for m in modes:
        assert np.allclose(KE @ m, 0.0, atol=1e-14)
    assert np.sum(np.linalg.eigvalsh(KE) > 1e-12) == 5


def test_edge_nodes_order():
    assert list(edge_nodes(3, 2, "bottom")) == [0, 1, 2, 3]
    assert list(edge_nodes(3, 2, "left")) == [0, 4, 8]
    with pytest.raises(InvalidInputError):
        edge_nodes(3, 2, "middle")


def test_benchmark_meshes():
    m = carrier_plate_mesh(6, 4)
    assert m.load_length == 6.0 and m.load_dir == (0.0, 1.0)
    c = cantilever_mesh(10, 6, 2)
    assert c.load_length == 2.0
    assert np.all(c.load_nodes // 11 >= 4)  # top of the left edge
    assert michell_mesh(8, 4).fixed_dofs.size == 4


def dense_reference(mesh, rho, params, F):
    K = assemble_stiffness(mesh, rho, params).toarray()
    free = mesh.free_dofs
    U = np.zeros_like(F)
    U[free] = np.linalg.solve(K[np.ix_(free, free)], F[free])
    return U


@pytest.mark.parametrize("solver", ["direct", "cg"])
def test_solve_matches_dense(solver):
    mesh = carrier_plate_mesh(8, 5)
    params = SimpParams(E0=1000.0)
    rho = np.random.default_rng(3).uniform(0.2, 1.0, mesh.n_elem)
    F = lump_line_load(mesh, np.linspace(-1.0, 0.5, mesh.load_nodes.size))
    U = assemble_and_factor(mesh, rho, params, solver).solve(F)
    ref = dense_reference(mesh, rho, params, F)
    assert np.allclose(U, ref, rtol=1e-7, atol=1e-12 * np.abs(ref).max())


def test_unsupported_mesh_is_structural_error():
    mesh = Mesh.build(4, 4, ["corner:bl:y"], "top")
    with pytest.raises(StructuralError):
        assemble_and_factor(mesh, np.ones(16), SimpParams())


def test_density_validation():
    mesh = carrier_plate_mesh(3, 3)
    with pytest.raises(InvalidInputError):
        assemble_stiffness(mesh, np.full(9, 1.2), SimpParams())
    with pytest.raises(InvalidInputError):
        SimpParams(E0=1.0, Emin=2.0)


def test_lumping_preserves_resultant():
    mesh = carrier_plate_mesh(10, 3, elem_size=2.5)
    F = lump_line_load(mesh, np.full(mesh.load_nodes.size, -2.0))
    assert F[1::2].sum() == pytest.approx(-2.0 * mesh.load_length)
    assert np.all(F[0::2] == 0.0)
    x = mesh.load_coords
    F = lump_line_load(mesh, x)
    assert F[1::2].sum() == pytest.approx(0.0, abs=1e-12)


def test_load_length_must_match_field():
    mesh = carrier_plate_mesh(10, 3)
    with pytest.raises(InvalidInputError):
        build_load_cases(mesh, kl_basis(ExponentialKernel(1.0, 2.0, 4.0), 3), -1.0)


def test_compliance_matrix_scaling_identity():
    mesh = carrier_plate_mesh(12, 6)
    params = SimpParams(E0=1000.0)
    rho = np.random.default_rng(0).uniform(0.3, 1.0, mesh.n_elem)
    fac = assemble_and_factor(mesh, rho, params)
    basis = kl_basis(ExponentialKernel(1.0, 3.0, 6.0), 5)

    def C_at(mu, sigma):
        loads = build_load_cases(mesh, basis, mu, sigma)
        return compliance_matrix(loads, solve_cases(fac, loads))

    C_ref = C_at(-1.0, 1.5)
    for mu, sigma in [(-1.356, 1.289), (-0.644, 1.803), (2.0, 0.1)]:
        assert np.allclose(scale_compliance(C_ref, -1.0, 1.5, mu, sigma), C_at(mu, sigma),
                           rtol=1e-10, atol=1e-12 * np.abs(C_ref).max())


def test_compliance_matrix_symmetric_psd():
    mesh = carrier_plate_mesh(10, 5)
    fac = assemble_and_factor(mesh, np.full(mesh.n_elem, 0.5), SimpParams())
    loads = build_load_cases(mesh, kl_basis(ExponentialKernel(1.0, 2.0, 5.0), 4), -1.0)
    C = compliance_matrix(loads, solve_cases(fac, loads))
    assert np.allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() > -1e-10 * np.abs(C).max()
