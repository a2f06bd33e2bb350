import math

import numpy as np
import pytest

from promkit import (
    GridSpec,
    UnsupportedGeometryError,
    ValidationError,
    VencSet,
    WrappedVelocities,
    complex_mle_grid,
    nco_estimate,
    nco_objective,
    odv_estimate,
    odv_objective,
    pair_products,
    sdv_estimate,
    symmetric_moments_from_vencs,
    vencs_from_moments,
    wrapped_from_products,
)

from conftest import noiseless_voxel


def wrapped_at(v, vencs):
    return WrappedVelocities(np.mod(v, 2.0 * vencs.venc), vencs)


def test_grid_spec_values():
    g = GridSpec(-30.0, 30.0, 0.5)
    vals = g.values()
    assert vals.size == 120
    assert vals[0] == -30.0
    assert vals[-1] == pytest.approx(29.5)
    assert 30.0 not in vals  # hi endpoint excluded
    with pytest.raises(ValidationError):
        GridSpec(0.0, 1.0, -0.1)
    with pytest.raises(ValidationError):
        GridSpec(2.0, 1.0, 0.1)


def test_grid_spec_default(scheme_15_6_10):
    vencs = vencs_from_moments(scheme_15_6_10)
    g = GridSpec.default_for(vencs)
    assert g.lo == pytest.approx(-30.0)
    assert g.hi == pytest.approx(30.0)
    assert g.step == pytest.approx(0.006)
    assert g.values().size == 10000


def test_sdv_corrected_noiseless(scheme_15_6_10):
    # exact within the coarse pair's unambiguous window [0, 2*venc21)
    vencs = vencs_from_moments(scheme_15_6_10)
    for v in (0.0, 3.2, 6.0, 14.9, 22.7, 29.3):
        got = sdv_estimate(wrapped_at(v, vencs))
        assert got == pytest.approx(v, abs=1e-9)


def test_sdv_extreme_lobe():
    vencs = VencSet(np.array([15.0, 6.0, 10.0]))
    cap = math.floor(15.0 / 6.0)  # valid inputs reach at most 2 lobes
    # noisy pair: ratio 2.483 rounds to the top lobe and stays clamped
    wrapped = WrappedVelocities(np.array([29.9, 0.1, 5.0]), vencs)
    got = sdv_estimate(wrapped)
    assert round((got - 0.1) / 12.0) == cap
    assert got == pytest.approx(0.1 + 2.0 * cap * 6.0)


def test_sdv_as_printed_windows():
    vencs = VencSet(np.array([15.0, 6.0, 10.0]))
    # ratio (vt21 - vt31) / (2 venc31) = 1 lands in the (0.8, 1.2) window
    wrapped = WrappedVelocities(np.array([14.0, 2.0, 5.0]), vencs)
    assert sdv_estimate(wrapped, mode="as_printed") == pytest.approx(14.0 + 12.0)
    # ratio 0.5 falls between windows: coarse value passes through
    wrapped = WrappedVelocities(np.array([8.0, 2.0, 5.0]), vencs)
    assert sdv_estimate(wrapped, mode="as_printed") == pytest.approx(8.0)
    with pytest.raises(ValidationError):
        sdv_estimate(wrapped, mode="other")


def test_odv_objective_matches_formula(scheme_15_6_10):
    vencs = vencs_from_moments(scheme_15_6_10)
    wrapped = wrapped_at(7.3, vencs)
    v = np.array([-5.0, 0.0, 7.3, 20.0])
    got = odv_objective(v, wrapped)
    expect = np.zeros(4)
    for idx in (1, 2):
        venc = vencs.venc[idx]
        expect += 1.0 - np.cos(np.pi * (v - wrapped.v_tilde[idx]) / venc)
    assert np.allclose(got, expect, atol=1e-12)
    assert got[2] == pytest.approx(0.0, abs=1e-12)
    assert np.all(got >= 0.0)


def test_odv_estimate_noiseless(scheme_15_6_10):
    vencs = vencs_from_moments(scheme_15_6_10)
    for v in (-29.0, -1.5, 0.0, 12.0, 29.5):
        got = odv_estimate(wrapped_at(v, vencs))
        assert abs(got - v) <= 0.006 + 1e-12


def test_odv_periodicity(scheme_15_6_10):
    # the two-pair objective repeats with the full range, period 60 here
    vencs = vencs_from_moments(scheme_15_6_10)
    wrapped = wrapped_at(4.0, vencs)
    v = np.linspace(-30.0, 30.0, 101)
    a = odv_objective(v, wrapped)
    b = odv_objective(v + 60.0, wrapped)
    assert np.allclose(a, b, atol=1e-10)


def test_nco_objective_weighting(scheme_15_6_10):
    vencs = vencs_from_moments(scheme_15_6_10)
    v = np.linspace(-30.0, 30.0, 61)
    r31, r32 = 2.0 * np.exp(0.4j), 0.5 * np.exp(-0.2j)
    got = nco_objective(v, r31, r32, vencs)
    expect = np.zeros_like(v)
    for idx, r in ((1, r31), (2, r32)):
        venc = vencs.venc[idx]
        gap = np.exp(1j * np.pi * v / venc) - np.exp(1j * np.angle(r))
        expect += abs(r) ** 2 * np.abs(gap) ** 2
    assert np.allclose(got, expect, rtol=1e-12)


def test_nco_estimate_noiseless(scheme_15_6_10):
    vencs = vencs_from_moments(scheme_15_6_10)
    for v in (-20.0, 3.7, 25.0):
        y = noiseless_voxel(scheme_15_6_10, v)
        r = pair_products(y)
        got = nco_estimate(r[1], r[2], vencs)
        assert abs(got - v) <= 0.006 + 1e-12


def test_requires_three_point_geometry():
    vencs = VencSet(np.array([5.0]))
    wrapped = WrappedVelocities(np.array([1.0]), vencs)
    with pytest.raises(UnsupportedGeometryError):
        sdv_estimate(wrapped)
    with pytest.raises(UnsupportedGeometryError):
        odv_objective(np.array([0.0]), wrapped)


def test_complex_mle_noiseless(scheme_15_6_10):
    for v in (-12.0, 0.0, 21.3):
        y = noiseless_voxel(scheme_15_6_10, v, phi0=0.9,
                            amps=np.array([2.0, 3.0, 2.0]))
        v_hat, curve = complex_mle_grid(y, scheme_15_6_10)
        assert abs(v_hat - v) <= 0.006 + 1e-12
        assert curve.size == 10000
        assert np.all(curve >= -1e-9)


def test_complex_mle_multi_coil(scheme_15_6_10):
    sens = np.array([1.0, 0.4 - 0.8j])
    y = noiseless_voxel(scheme_15_6_10, 9.0, amps=np.array([1.0, 2.0, 1.0]),
                        sens=sens)
    v_hat, _ = complex_mle_grid(y, scheme_15_6_10)
    assert abs(v_hat - 9.0) <= 0.006 + 1e-12
    with pytest.raises(ValidationError):
        complex_mle_grid(y[:2], scheme_15_6_10)


def test_complex_mle_sign_constraint(scheme_15_6_10):
    # without the nonnegativity constraint the relaxation admits a mirror
    # solution with negated amplitudes half a fine period away; with it the
    # true velocity wins
    v = 10.0
    y = noiseless_voxel(scheme_15_6_10, v)
    v_con, curve_con = complex_mle_grid(y, scheme_15_6_10,
                                        nonnegative_amplitudes=True)
    v_rel, curve_rel = complex_mle_grid(y, scheme_15_6_10,
                                        nonnegative_amplitudes=False)
    assert abs(v_con - v) <= 0.006 + 1e-12
    assert np.all(curve_con >= curve_rel - 1e-9)
