import itertools

import numpy as np
import pytest

from imprecise_rto.bounds import RefCompliance
from imprecise_rto.errors import DegenerateVarianceError, InvalidInputError
from imprecise_rto.fem import (SimpParams, assemble_and_factor, build_load_cases,
                               carrier_plate_mesh, compliance_matrix, element_stiffness,
                               solve_cases)
from imprecise_rto.moments import DIAGONAL_FREE, compliance_moments
from imprecise_rto.random_field import ExponentialKernel, kl_basis
from imprecise_rto.sensitivity import (bound_sensitivity, interval_sensitivity, ost_decompose,
                                       sensitivity_direct, sensitivity_field, weight_matrix)

PARAMS = SimpParams(E0=1000.0)


@pytest.fixture(scope="module")
def setup():
    mesh = carrier_plate_mesh(8, 4)
    rho = np.random.default_rng(1).uniform(0.3, 1.0, mesh.n_elem)
    loads = build_load_cases(mesh, kl_basis(ExponentialKernel(1.5, 3.0, 4.0), 4), -1.0)
    return mesh, rho, loads


def response(mesh, rho, loads):
    U = solve_cases(assemble_and_factor(mesh, rho, PARAMS), loads)
    return U, compliance_matrix(loads, U)


def robust_value(C, beta, mode="isserlis-full"):
    m = compliance_moments(C, mode)
    return m.mean + beta * m.std_dev


def test_weight_matrix_special_cases():
    C = np.array([[2.0, 1.0], [1.0, 3.0]])
    assert np.array_equal(weight_matrix(C, 0.0, 0.0), np.eye(2))
    with pytest.raises(DegenerateVarianceError):
        weight_matrix(C, 1.0, 0.0)
    W = weight_matrix(C, 1.0, 2.0, DIAGONAL_FREE)
    assert np.allclose(np.diag(W), 1.0)


def test_ost_reconstructs_and_is_ordered():
    A = np.random.default_rng(0).normal(size=(6, 6))
    W = A + A.T
    ost = ost_decompose(W)
    assert np.allclose(ost.T @ np.diag(ost.eigvals) @ ost.T.T, W)
    assert np.all(np.diff(ost.eigvals) <= 0)
    assert np.allclose(ost.T.T @ ost.T, np.eye(6))
    pivot = np.argmax(np.abs(ost.T), axis=0)
    assert np.all(ost.T[pivot, np.arange(6)] > 0)


def test_ost_matches_double_sum(setup):
    mesh, rho, loads = setup
    U, C = response(mesh, rho, loads)
    W = weight_matrix(C, 2.0, compliance_moments(C).std_dev)
    fast = sensitivity_field(U, ost_decompose(W), rho, PARAMS, mesh)
    slow = sensitivity_direct(U, W, rho, PARAMS, mesh)
    assert np.allclose(fast, slow, rtol=1e-9, atol=1e-12 * np.abs(slow).max())


def test_double_sum_matches_explicit_loops(setup):
    mesh, rho, loads = setup
    U, C = response(mesh, rho, loads)
    W = weight_matrix(C, 1.0, compliance_moments(C).std_dev)
    KE = element_stiffness(PARAMS.nu)
    edof = mesh.edof
    dE = PARAMS.modulus_derivative(rho)
    loops = np.zeros(mesh.n_elem)
    for e in range(mesh.n_elem):
        for i, j in itertools.product(range(W.shape[0]), repeat=2):
            loops[e] -= dE[e] * W[i, j] * U[edof[e], i] @ KE @ U[edof[e], j]
    assert np.allclose(sensitivity_direct(U, W, rho, PARAMS, mesh), loops, rtol=1e-10)


@pytest.mark.parametrize("mode", ["isserlis-full", DIAGONAL_FREE])
@pytest.mark.parametrize("beta", [0.0, 1.0, 3.0])
def test_gradient_matches_finite_differences(setup, beta, mode):
    mesh, rho, loads = setup
    U, C = response(mesh, rho, loads)
    ref = RefCompliance(C, -1.0, loads.sigma_ref)
    point = (-1.3, 1.8)
    sens = bound_sensitivity(ref, U, point, beta, mode, rho, PARAMS, mesh)
    s = ref.scales(*point)[0]
    h = 1e-6
    for e in (0, 5, 17, 31):
        vals = []
        for sign in (1, -1):
            r = rho.copy()
            r[e] += sign * h
            Ce = response(mesh, r, loads)[1] * np.outer(s, s)
            vals.append(robust_value(Ce, beta, mode))
        fd = (vals[0] - vals[1]) / (2 * h)
        assert sens.dJ[e] == pytest.approx(fd, rel=1e-5)


def test_interval_weights():
    a, b = np.array([1.0, 2.0]), np.array([3.0, 5.0])
    assert np.allclose(interval_sensitivity(a, b, 0.25, 0.75), [2.5, 4.25])
    with pytest.raises(InvalidInputError):
        interval_sensitivity(a, b, 0.7, 0.5)
