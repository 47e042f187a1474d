import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fisherlab.bump import (
    DEFAULT_PROFILE,
    SmoothPotential,
    dphi_over_s,
    phi_and_slope,
    phi_eval,
    phi_scalar,
    quadratic_potential,
    radial_hessian_eigs,
    smoothness_audit,
)


def test_phi_at_zero():
    assert phi_eval(0.0) == (11 / 64, 0.0, -1.0)


def test_phi_at_one_vanishes():
    phi, dphi, _ = phi_eval(1.0)
    assert phi == pytest.approx(0.0, abs=1e-15)
    assert dphi == pytest.approx(0.0, abs=1e-14)


def test_branches_agree_at_quarter():
    cap = 11 / 64 - 0.5 * 0.25**2
    poly = np.polyval(list(reversed(DEFAULT_PROFILE.coeffs)), 0.25) / 27
    assert cap == pytest.approx(9 / 64, abs=1e-15)
    assert poly == pytest.approx(9 / 64, abs=1e-12)
    left = phi_eval(0.25 - 1e-9)
    right = phi_eval(0.25 + 1e-9)
    assert left[0] == pytest.approx(right[0], abs=1e-8)
    assert left[1] == pytest.approx(right[1], abs=1e-8)


def test_outside_support():
    assert phi_eval(2.0) == (0.0, 0.0, 0.0)


def test_profile_shape_dense():
    s = np.linspace(0, 1.5, 200001)
    phi, dphi, ddphi = phi_eval(s)
    assert np.all(np.diff(phi[s <= 1]) <= 1e-15)
    assert np.all(np.abs(ddphi) <= 1 + 1e-12)
    cap = s <= 0.25
    assert np.allclose(phi[cap], 11 / 64 - s[cap] ** 2 / 2, atol=1e-15)


def test_negative_argument_rejected():
    with pytest.raises(ValueError):
        phi_eval(-0.1)


@given(st.floats(min_value=0, max_value=2, allow_nan=False))
def test_fast_paths_match_reference(s):
    phi, dphi, _ = phi_eval(s)
    assert phi_scalar(s) == pytest.approx(phi, abs=1e-15)
    p2, slope = phi_and_slope(np.array([s]))
    assert p2[0] == pytest.approx(phi, abs=1e-15)
    assert slope[0] == pytest.approx(dphi_over_s(s), abs=1e-13)


def test_hessian_eigs_cap():
    t, r = radial_hessian_eigs(np.array([0.1, 0.0]), np.zeros(2), 1.0)
    assert t == pytest.approx(-1.0)
    assert r == pytest.approx(-1.0)


def test_hessian_eigs_outside_and_bounded():
    assert radial_hessian_eigs(np.array([2.0, 0.0]), np.zeros(2), 1.0) == (0.0, 0.0)
    t, r = radial_hessian_eigs(np.array([0.5, 0.0, 0.0]), np.zeros(3), 1.0)
    assert abs(t) <= 1 and abs(r) <= 1


def test_audit_quadratic_passes(rng):
    pot = quadratic_potential(2)
    pairs = [(rng.normal(size=2), rng.normal(size=2)) for _ in range(100)]
    rep = smoothness_audit(pot, pairs, 1.0)
    assert rep.passed and rep.max_ratio <= 1 + 1e-12


def test_audit_reports_quartic_violation():
    quartic = SmoothPotential(1, 1.0, lambda X: (X[:, 0] ** 4, 4 * X**3))
    rep = smoothness_audit(quartic, [(np.array([1.0]), np.array([1.1]))], 1.0)
    assert not rep.passed
    assert rep.max_ratio > 12


def test_shift_keeps_gradients():
    pot = quadratic_potential(1)
    v, g = pot(np.array([1.5]))
    v2, g2 = pot.shifted(3.0)(np.array([1.5]))
    assert v2 == v + 3.0 and np.array_equal(g, g2)


def test_scaled_smoothness():
    pot = quadratic_potential(1).scaled(4.0)
    assert pot.beta == 4.0
    assert pot(np.array([1.0]))[1][0] == 4.0


def test_point_shape_checked():
    with pytest.raises(ValueError):
        quadratic_potential(2)(np.zeros(3))


@settings(max_examples=50)
@given(st.floats(0.05, 3.0), st.floats(0.0, 1.2))
def test_bump_second_derivative_bounded_by_one(r, s):
    # r^2 phi(|x|/r) has second radial derivative phi''(s), bounded by 1 in size
    _, _, dd = phi_eval(s)
    assert abs(dd) <= 1 + 1e-12
    assert math.isfinite(r)
