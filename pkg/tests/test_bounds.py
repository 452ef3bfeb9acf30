import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imprecise_rto.bounds import (RefCompliance, SwarmConfig, ca_bounds, evaluate_points,
                                  monotonicity_report, pso_bounds, qmcs_bounds,
                                  sobol_box_points)
from imprecise_rto.errors import InvalidInputError, PreconditionViolation
from imprecise_rto.moments import DIAGONAL_FREE, compliance_moments
from imprecise_rto.random_field import PBox

PLATE_BOX = PBox(-1.356, -0.644, 1.289, 1.803)


def psd(n, seed):
    A = np.random.default_rng(seed).uniform(0.0, 1.0, (n, n))
    return A @ A.T


def grid_scan(ref, box, beta, n=201, mode="isserlis-full"):
    mu, sigma = np.meshgrid(np.linspace(box.mu_lo, box.mu_hi, n),
                            np.linspace(box.sigma_lo, box.sigma_hi, n))
    return evaluate_points(ref, mu.ravel(), sigma.ravel(), beta, mode)


def test_evaluate_points_matches_moments():
    ref = RefCompliance(psd(5, 1), -1.0, 1.5)
    s = ref.scales(-0.8, 1.7)[0]
    m = compliance_moments(ref.C * np.outer(s, s))
    mean, std, obj = evaluate_points(ref, -0.8, 1.7, 2.0)
    assert mean[0] == pytest.approx(m.mean)
    assert std[0] == pytest.approx(m.std_dev)
    assert obj[0] == pytest.approx(m.mean + 2.0 * m.std_dev)


@pytest.mark.parametrize("mode", ["isserlis-full", DIAGONAL_FREE])
def test_corners_match_dense_scan(mode):
    ref = RefCompliance(psd(6, 2), -1.0, 1.5)
    b = ca_bounds(ref, PLATE_BOX, 1.0, mode)
    mean, std, obj = grid_scan(ref, PLATE_BOX, 1.0, mode=mode)
    for q, v in (("mean", mean), ("std", std), ("obj", obj)):
        lo, hi = b.interval(q)
        assert lo == pytest.approx(v.min(), rel=1e-12)
        assert hi == pytest.approx(v.max(), rel=1e-12)
    assert b.argmax["obj"] == (-1.356, 1.803)
    assert b.argmin["obj"] == (-0.644, 1.289)


def test_corner_enumeration_rejects_zero_straddling_mean():
    ref = RefCompliance(psd(3, 0), -1.0, 1.0)
    with pytest.raises(PreconditionViolation):
        ca_bounds(ref, PBox(-0.5, 0.5, 1.0, 2.0), 1.0)


def test_qmcs_is_inner_estimate_and_converges():
    ref = RefCompliance(psd(6, 3), -1.0, 1.5)
    exact = ca_bounds(ref, PLATE_BOX, 1.0)
    q = qmcs_bounds(ref, PLATE_BOX, 1.0, 10_000)
    assert exact.encloses(q)
    assert q.obj_hi == pytest.approx(exact.obj_hi, rel=1e-2)
    assert q.meta["n_points"] == 10_000


def test_sobol_points_deterministic():
    a, b = sobol_box_points(50), sobol_box_points(50)
    assert np.array_equal(a, b)
    assert a.shape == (50, 2) and np.all((a >= 0) & (a < 1))


def test_straddling_mean_handled_by_scan():
    ref = RefCompliance(psd(4, 4), 1.0, 1.0)
    box = PBox(-0.5, 0.8, 0.5, 1.0)
    q = qmcs_bounds(ref, box, 1.0, 4000)
    mean, std, obj = grid_scan(ref, box, 1.0, 301)
    assert mean.min() <= q.mean_lo <= mean.min() + 1e-2 * mean.max()
    assert mean.max() * 0.97 <= q.mean_hi <= mean.max()


def test_pso_reaches_corners_and_is_reproducible():
    ref = RefCompliance(psd(5, 5), -1.0, 1.5)
    exact = ca_bounds(ref, PLATE_BOX, 1.0)
    cfg = SwarmConfig(20, 60, seed=9)
    a = pso_bounds(ref, PLATE_BOX, 1.0, cfg)
    b = pso_bounds(ref, PLATE_BOX, 1.0, cfg)
    assert a.obj_hi == b.obj_hi and a.argmax == b.argmax
    assert a.obj_hi == pytest.approx(exact.obj_hi, rel=1e-4)
    assert a.obj_lo == pytest.approx(exact.obj_lo, rel=1e-4)


@given(mu_lo=st.floats(-3.0, -0.1), width=st.floats(0.0, 2.0),
       s_lo=st.floats(0.0, 2.0), s_width=st.floats(0.0, 2.0), seed=st.integers(0, 50))
@settings(max_examples=40, deadline=None)
def test_moments_monotone_in_abs_mean_and_sigma(mu_lo, width, s_lo, s_width, seed):
    box = PBox(mu_lo, min(mu_lo + width, -0.05), s_lo, s_lo + s_width)
    ref = RefCompliance(psd(4, seed), -1.0, 1.0)
    rep = monotonicity_report(ref, box, 11)
    assert rep.all_monotone


def test_monotonicity_report_flags_sign_change():
    ref = RefCompliance(psd(3, 1), -1.0, 1.0)
    rep = monotonicity_report(ref, PBox(-1.0, 1.0, 0.5, 1.0), 21)
    assert rep.signs[("mu_f", "mean")] is None
    assert not rep.all_monotone
    with pytest.raises(InvalidInputError):
        monotonicity_report(ref, PLATE_BOX, 2)


def test_reference_point_must_be_nonzero():
    with pytest.raises(InvalidInputError):
        RefCompliance(np.eye(2), 0.0, 1.0)
