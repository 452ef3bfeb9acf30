"""Design sensitivities of the robust objective ``mean + beta * std``.

With ``J = sum_ij w_ij c_ij`` the derivative with respect to an element
density is a weighted double sum of element energies between load cases.
Diagonalizing the weight matrix, ``W = T diag(lam) T^T``, turns it into a
single sum over transformed displacement fields ``U T``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import RefCompliance
from .errors import DegenerateVarianceError, InvalidInputError, NumericalError
from .fem import Mesh, SimpParams, element_stiffness
from .moments import ISSERLIS_FULL, DIAGONAL_FREE, check_mode, compliance_moments


def weight_matrix(C: np.ndarray, beta: float, std_dev: float,
                  mode: str = ISSERLIS_FULL) -> np.ndarray:
    """``dJ/dc_ij`` for unit-variance Gaussian coefficients.

    ``w_ii = 1 + 2 beta c_ii / std``, ``w_ij = 2 beta c_ij / std``; in
    ``diagonal-free`` mode the diagonal term of the variance is absent, so the
    diagonal correction vanishes.
    """
    mode = check_mode(mode)
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if beta == 0:
        return np.eye(n)
    if std_dev <= 0:
        raise DegenerateVarianceError(
            f"beta={beta} > 0 needs a positive compliance std-dev, got {std_dev}")
    G = C.copy()
    if mode == DIAGONAL_FREE:
        np.fill_diagonal(G, 0.0)
    return np.eye(n) + (2.0 * beta / std_dev) * G


@dataclass(frozen=True)
class OstDecomposition:
    T: np.ndarray
    eigvals: np.ndarray


def ost_decompose(W: np.ndarray) -> OstDecomposition:
    """Orthogonal diagonalization of ``W``, eigenvalues descending.

    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InvalidInputError(f"W must be square, got {W.shape}")
    try:
        vals, vecs = np.linalg.eigh(0.5 * (W + W.T))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigen-decomposition of W failed: {exc}") from exc
    order = np.argsort(vals, kind="stable")[::-1]
    vals, vecs = vals[order], vecs[:, order]
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return OstDecomposition(vecs * signs, vals)


def _element_fields(mesh: Mesh, U: np.ndarray) -> np.ndarray:
    if U.ndim == 1:
        U = U[:, None]
    return U[mesh.edof]  # (n_elem, 8, k)


def sensitivity_field(U: np.ndarray, ost: OstDecomposition, rho_phys: np.ndarray,
                      params: SimpParams, mesh: Mesh) -> np.ndarray:
    """``dJ/drho_e = -p rho_e^(p-1) (E0 - Emin) sum_i lam_i U_ie^T k_e U_ie``."""
    if U.shape[1] != ost.T.shape[0]:
        raise InvalidInputError("displacement cases do not match the decomposition")
    ue = _element_fields(mesh, U @ ost.T)
    KE = element_stiffness(params.nu)
    energy = np.einsum("eak,ab,ebk->ek", ue, KE, ue)
    return -params.modulus_derivative(rho_phys) * (energy @ ost.eigvals)


def sensitivity_direct(U: np.ndarray, W: np.ndarray, rho_phys: np.ndarray,
                       params: SimpParams, mesh: Mesh) -> np.ndarray:
    """Double-sum form ``-p rho^(p-1) (E0 - Emin) sum_ij w_ij u_ie^T k_e u_je``."""
    ue = _element_fields(mesh, U)
    KE = element_stiffness(params.nu)
    pair = np.einsum("eai,ab,ebj->eij", ue, KE, ue)
    return -params.modulus_derivative(rho_phys) * np.einsum("eij,ij->e", pair, W)


@dataclass(frozen=True)
class BoundSensitivity:
    """Sensitivity of the objective evaluated at one fixed p-box point."""

    dJ: np.ndarray
    mean: float
    std_dev: float
    W: np.ndarray
    ost: OstDecomposition


def bound_sensitivity(ref: RefCompliance, U_ref: np.ndarray, point: tuple[float, float],
                      beta: float, mode: str, rho_phys: np.ndarray, params: SimpParams,
                      mesh: Mesh) -> BoundSensitivity:
    """Sensitivity at a p-box point, with the load cases rescaled to that point."""
    s = ref.scales(*point)[0]
    C = ref.C * np.outer(s, s)
    mom = compliance_moments(C, mode)
    W = weight_matrix(C, beta, mom.std_dev, mode)
    ost = ost_decompose(W)
    dJ = sensitivity_field(U_ref * s[None, :], ost, rho_phys, params, mesh)
    return BoundSensitivity(dJ, mom.mean, mom.std_dev, W, ost)


def interval_sensitivity(sens_upper: np.ndarray, sens_lower: np.ndarray,
                         w1: float, w2: float) -> np.ndarray:
    """``w1 * dJ_upper + w2 * dJ_lower``."""
    if w1 < 0 or w2 < 0 or abs(w1 + w2 - 1.0) > 1e-12:
        raise InvalidInputError(f"need w1, w2 >= 0 with w1 + w2 = 1, got {w1}, {w2}")
    return w1 * np.asarray(sens_upper) + w2 * np.asarray(sens_lower)
