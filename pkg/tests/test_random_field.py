import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imprecise_rto.errors import InvalidInputError
from imprecise_rto.random_field import (COSINE, SINE, ExponentialKernel, PBox, kl_basis,
                                        kl_basis_by_significance, kl_family_roots,
                                        kl_frequencies, mercer_covariance, nystrom_eigenpairs,
                                        pbox_from_samples, pbox_from_stats, realize_field,
                                        significance_order)


def gauss_grid(a, n_panels=400, order=8):
    """Composite Gauss-Legendre nodes and weights on [-a, a]."""
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-a, a, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * t).ravel(), (half[:, None] * w).ravel()


# p-box construction

def test_constant_samples_give_degenerate_sigma_with_warning():
    with pytest.warns(RuntimeWarning):
        box = pbox_from_samples([-1.0] * 20, 0.95)
    assert box.mu_lo == box.mu_hi == -1.0
    assert box.sigma_lo == box.sigma_hi == 0.0


def test_seeded_samples_mean_interval():
    x = np.random.default_rng(1234).normal(-1.0, 1.5, 10_000)
    box = pbox_from_samples(x, 0.90)
    assert box.mu_lo == pytest.approx(-1.0247, abs=0.01)
    assert box.mu_hi == pytest.approx(-0.9753, abs=0.01)


def test_pbox_from_stats_closed_form():
    from scipy import stats
    box = pbox_from_stats(-1.0, 1.5, 48, 0.90)
    half = stats.norm.ppf(0.95) * 1.5 / np.sqrt(48)
    assert box.mu_lo == pytest.approx(-1.0 - half, rel=1e-12)
    s_hi = 1.5 * np.sqrt(47 / stats.chi2.ppf(0.05, 47))
    assert box.sigma_hi == pytest.approx(s_hi, rel=1e-12)
    # mean interval matches the operating p-box to the printed digits
    assert (round(box.mu_lo, 3), round(box.mu_hi, 3)) == (-1.356, -0.644)


def test_direct_pbox_accepted():
    box = PBox(-1.356, -0.644, 1.289, 1.803)
    assert not box.straddles_zero


def test_too_few_samples():
    with pytest.raises(InvalidInputError):
        pbox_from_samples([1.0, 2.0], 0.9)


def test_ci_nesting():
    boxes = [pbox_from_stats(-1.0, 1.5, 48, c) for c in (0.90, 0.95, 0.99)]
    assert boxes[2].contains(boxes[1]) and boxes[1].contains(boxes[0])
    assert boxes[2].mu_lo < boxes[1].mu_lo < boxes[0].mu_lo


@pytest.mark.parametrize("bad", [(1.0, 0.0, 1.0, 1.0), (0.0, 1.0, 2.0, 1.0), (0.0, 1.0, -1.0, 1.0)])
def test_pbox_invariants(bad):
    with pytest.raises(InvalidInputError):
        PBox(*bad)


# K-L roots and eigenpairs

def test_first_roots_unit_domain():
    assert kl_family_roots(1.0, 1.0, 1, COSINE)[0] == pytest.approx(0.8603335890, rel=1e-9)
    assert kl_family_roots(1.0, 1.0, 1, SINE)[0] == pytest.approx(2.0287578381, rel=1e-9)


def test_first_eigenvalue_unit_domain():
    basis = kl_basis(ExponentialKernel(1.0, 1.0, 1.0), 3)
    assert basis.lambdas[0] == pytest.approx(2.0 / (1.0 + 0.8603335890 ** 2), rel=1e-9)
    assert basis.lambdas[0] == pytest.approx(1.1494, abs=1e-4)
    assert basis.parity[0] == COSINE


@given(a=st.floats(0.1, 50.0), L=st.floats(0.05, 50.0), M=st.integers(1, 40))
@settings(max_examples=60, deadline=None)
def test_roots_satisfy_equations_and_interlace(a, L, M):
    for fam in (COSINE, SINE):
        w = kl_family_roots(a, L, M, fam)
        k = np.arange(M)
        if fam == COSINE:
            lo, hi = k * np.pi / a, (k + 0.5) * np.pi / a
            resid = w * L * np.sin(w * a) - np.cos(w * a)
        else:
            lo, hi = (k + 0.5) * np.pi / a, (k + 1) * np.pi / a
            resid = np.sin(w * a) + w * L * np.cos(w * a)
        assert np.all((w > lo) & (w < hi))
        assert np.all(np.abs(resid) < 1e-8 * np.maximum(1.0, w * L))
    merged = kl_frequencies(a, L, M)
    assert np.all(np.diff(merged) > 0)


def test_zero_sigma_gives_zero_eigenvalues():
    basis = kl_basis(ExponentialKernel(0.0, 2.0, 5.0), 6)
    assert np.all(basis.lambdas == 0.0)


def test_eigenvalues_match_nystrom():
    kernel = ExponentialKernel(1.0, 10.0, 100.0)
    ny = nystrom_eigenpairs(kernel, 2000, 50)
    basis = kl_basis(kernel, 50)
    assert np.max(np.abs(ny.lambdas - basis.lambdas) / basis.lambdas) < 1e-3


def test_nystrom_trace_and_rank_one_limit():
    kernel = ExponentialKernel(1.3, 2.0, 4.0)
    ny = nystrom_eigenpairs(kernel, 400, 5)
    assert ny.trace == pytest.approx(kernel.trace, rel=1e-6)
    flat = ExponentialKernel(1.0, 1e6 * 4.0, 4.0)
    ny = nystrom_eigenpairs(flat, 400, 3)
    assert ny.lambdas[0] == pytest.approx(flat.trace, rel=1e-5)
    assert np.all(ny.lambdas[1:] < 1e-5 * flat.trace)


def test_eigenfunctions_orthonormal():
    basis = kl_basis(ExponentialKernel(1.0, 10.0, 100.0), 30)
    x, w = gauss_grid(100.0)
    phi = basis.eigenfunctions(x)
    gram = (phi * w) @ phi.T
    assert np.max(np.abs(gram - np.eye(30))) < 1e-6


def test_eigenfunctions_solve_integral_equation():
    kernel = ExponentialKernel(1.0, 3.0, 5.0)
    basis = kl_basis(kernel, 6)
    x, w = gauss_grid(5.0, 2000, 4)
    for i in range(6):
        phi = basis.eigenfunctions(x)[i]
        probe = np.array([-4.1, 0.3, 2.7])
        lhs = (kernel(probe[:, None], x[None, :]) * w) @ phi
        assert np.allclose(lhs, basis.lambdas[i] * basis.eigenfunctions(probe)[i], atol=1e-6)


def test_truncated_sum_below_trace():
    basis = kl_basis(ExponentialKernel(1.0, 10.0, 100.0), 200)
    assert basis.lambdas.sum() < basis.trace
    assert np.all(np.diff(basis.lambdas) <= 0)


def test_mercer_error_decreases_with_M():
    kernel = ExponentialKernel(1.0, 2.0, 5.0)
    x = np.linspace(-5, 5, 41)
    exact = kernel(x[:, None], x[None, :])
    errs = [np.max(np.abs(mercer_covariance(kl_basis(kernel, M), x, x) - exact))
            for M in (5, 10, 20, 40)]
    assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))


# significance check

def test_significance_arithmetic():
    assert significance_order([4, 3, 2, 1], 0.69, 10.0) == 2
    assert significance_order([4, 3, 2, 1], 1e-9, 10.0) == 1


def test_significance_unreachable_warns():
    with pytest.warns(RuntimeWarning):
        assert significance_order([1.0, 1.0], 0.9, 10.0) == 2


def test_significance_carrier_plate_geometry():
    # the analytic-trace rule needs 41 terms at a=100, L=10; 14 terms hold 72%
    basis = kl_basis_by_significance(ExponentialKernel(1.0, 10.0, 100.0), 0.90)
    assert basis.M == 41
    assert kl_basis(ExponentialKernel(1.0, 10.0, 100.0), 14).energy_fraction == pytest.approx(
        0.7228, abs=5e-4)


@pytest.mark.xfail(strict=True, reason="analytic-trace significance rule gives M=41, not 14")
def test_significance_order_is_fourteen():
    basis = kl_basis_by_significance(ExponentialKernel(1.0, 10.0, 100.0), 0.90)
    assert basis.M == 14


# realizations

def test_zero_coefficients_give_mean():
    basis = kl_basis(ExponentialKernel(1.5, 10.0, 100.0), 14)
    r = realize_field(basis, -1.0, np.zeros(14), np.linspace(-100, 100, 11))
    assert np.all(r.values == -1.0)


def test_coordinates_outside_domain_rejected():
    basis = kl_basis(ExponentialKernel(1.0, 1.0, 1.0), 2)
    with pytest.raises(InvalidInputError):
        realize_field(basis, 0.0, np.zeros(2), [1.5])


def test_empirical_covariance_matches_mercer():
    basis = kl_basis(ExponentialKernel(1.5, 10.0, 100.0), 14)
    xs = np.array([-20.0, 5.0])
    xi = np.random.default_rng(7).standard_normal((100_000, 14))
    v = realize_field(basis, 0.0, xi, xs).values
    prod = v[:, 0] * v[:, 1]
    se = prod.std(ddof=1) / np.sqrt(prod.size)
    target = mercer_covariance(basis, xs[:1], xs[1:])[0, 0]
    assert abs(prod.mean() - target) < 3 * se
    var0 = realize_field(basis, 0.0, xi, [0.0]).values[:, 0].var()
    assert var0 <= 1.5 ** 2


def test_scaled_basis_matches_fresh_basis():
    b1 = kl_basis(ExponentialKernel(1.0, 10.0, 100.0), 8).scaled(1.7)
    b2 = kl_basis(ExponentialKernel(1.7, 10.0, 100.0), 8)
    assert np.allclose(b1.lambdas, b2.lambdas, rtol=1e-13)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert b1.sigma == 1.7
