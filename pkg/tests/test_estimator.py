import itertools
import math

import numpy as np
import pytest

from promkit import (
    PromModel,
    SnrMatrix,
    ValidationError,
    VencSet,
    WrappedVelocities,
    blue_weights,
    candidate_wrap_set,
    full_search_size,
    neg_log_likelihood,
    pair_products,
    prom_estimate,
    prom_from_wrapped,
    spd_pseudo_inverse,
    symmetric_moments_from_vencs,
    vencs_from_moments,
    wrap_to_range,
    wrapped_from_products,
)
from promkit.errors import DegenerateCovarianceError, MaskedVoxelError

from conftest import noiseless_voxel


def random_spd(rng, n, cond=None):
    a = rng.normal(size=(n, n))
    m = a @ a.T + 0.1 * np.eye(n)
    return m


def wrapped_at(v, vencs):
    vt = np.mod(v, 2.0 * vencs.venc)
    vt = np.where(vt >= 2.0 * vencs.venc, 0.0, vt)
    return WrappedVelocities(vt, vencs)


def test_spd_pseudo_inverse_full_rank():
    rng = np.random.default_rng(0)
    m = random_spd(rng, 4)
    assert np.allclose(spd_pseudo_inverse(m), np.linalg.inv(m), rtol=1e-9)


def test_spd_pseudo_inverse_rank_deficient():
    u = np.array([[1.0], [2.0]])
    m = u @ u.T  # rank one, eigenvalue 5
    got = spd_pseudo_inverse(m)
    assert np.allclose(got, u @ u.T / 25.0, atol=1e-12)
    assert np.allclose(m @ got @ m, m, atol=1e-12)


def test_spd_pseudo_inverse_errors():
    with pytest.raises(DegenerateCovarianceError):
        spd_pseudo_inverse(-np.eye(2))
    with pytest.raises(ValidationError):
        spd_pseudo_inverse(np.ones((2, 3)))


def test_blue_weights_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(50):
        w = blue_weights(random_spd(rng, 3))
        assert math.isclose(float(np.sum(w)), 1.0, rel_tol=0, abs_tol=1e-12)


def test_blue_weights_inverse_variance_on_diagonal():
    w = blue_weights(np.diag([1.0, 4.0, 5.0]))
    expect = np.array([1.0, 0.25, 0.2])
    assert np.allclose(w, expect / expect.sum(), rtol=1e-12)


def test_blue_weights_equalize_residual_covariance():
    # S w is constant across components, so w' S (e_i - e_j) = 0 for all i, j
    rng = np.random.default_rng(2)
    for _ in range(50):
        sigma = random_spd(rng, 3)
        resid = sigma @ blue_weights(sigma)
        assert np.max(np.abs(resid - resid[0])) < 1e-8 * max(1.0, abs(resid[0]))


def test_full_search_size_oracle():
    vencs = VencSet(np.array([35.0, 10.0, 14.0]))
    assert list(vencs.wrap_counts()) == [2, 7, 5]
    assert full_search_size(vencs.wrap_counts()) == 252  # (2+2)(7+2)(5+2)


def test_candidate_set_bounded_and_attained():
    vencs = VencSet(np.array([35.0, 10.0, 14.0]))
    cap = int(np.sum(vencs.wrap_counts()))  # 14
    rng = np.random.default_rng(3)
    sizes = []
    for _ in range(300):
        vt = rng.uniform(0.0, 2.0 * vencs.venc)
        k = candidate_wrap_set(WrappedVelocities(vt, vencs))
        assert k.shape[1] == 3
        sizes.append(k.shape[0])
    assert max(sizes) <= cap
    assert max(sizes) == cap


def test_candidate_set_contains_brute_force_minimizer():
    # every candidate produced by the arcs must dominate the exhaustive
    # lattice search for any weighting
    vencs = VencSet(np.array([3.0, 1.0, 1.5]))
    h = vencs.wrap_counts()  # [1, 3, 2]
    omega = vencs.range()
    sigma = np.array([[0.20, 0.02, -0.01],
                      [0.02, 0.05, 0.01],
                      [-0.01, 0.01, 0.08]])
    pinv = spd_pseudo_inverse(sigma)
    w = blue_weights(sigma)
    lattice = np.array(list(itertools.product(*[range(-1, int(hi) + 1)
                                                for hi in h])))
    rng = np.random.default_rng(4)
    for _ in range(300):
        vt = rng.uniform(0.0, 2.0 * vencs.venc)
        wrapped = WrappedVelocities(vt, vencs)
        best = prom_from_wrapped(wrapped, sigma).candidates[0]
        nlls = []
        for k in lattice:
            v_k = wrap_to_range(float(w @ (vt + 2.0 * k * vencs.venc)), omega, 0.0)
            nlls.append(neg_log_likelihood(wrapped, v_k, pinv))
        assert best.nll <= min(nlls) + 1e-12


def test_shift_equivariance():
    # adding eta to every wrapped input shifts the estimate by eta mod Omega
    vencs = VencSet(np.array([15.0, 6.0, 10.0]))
    omega = vencs.range()
    sigma = np.diag([1.5, 0.3, 0.6]) + 0.05
    rng = np.random.default_rng(5)
    for _ in range(200):
        vt = rng.uniform(0.0, 2.0 * vencs.venc)
        eta = rng.uniform(-100.0, 100.0)
        base = prom_from_wrapped(WrappedVelocities(vt, vencs), sigma)
        shifted_vt = np.mod(vt + eta, 2.0 * vencs.venc)
        shifted_vt = np.where(shifted_vt >= 2.0 * vencs.venc, 0.0, shifted_vt)
        shifted = prom_from_wrapped(WrappedVelocities(shifted_vt, vencs), sigma)
        expect = wrap_to_range(base.v_hat + eta, omega, 0.0)
        diff = abs(shifted.v_hat - expect)
        assert min(diff, omega - diff) < 1e-9


def test_prom_noiseless_exact(scheme_15_6_10):
    vencs = vencs_from_moments(scheme_15_6_10)
    omega = vencs.range()
    sigma = np.diag([0.9, 0.1, 0.3])
    for v in (-29.9, -3.0, 0.0, 17.42, 59.0):
        res = prom_from_wrapped(wrapped_at(v, vencs), sigma)
        assert abs(res.v_hat - wrap_to_range(v, omega, 0.0)) < 1e-9
        assert res.candidates[0].nll < 1e-16
        assert res.omega == pytest.approx(60.0)
        nlls = [c.nll for c in res.candidates]
        assert nlls == sorted(nlls)


def test_prom_offset_window(scheme_15_6_10):
    vencs = vencs_from_moments(scheme_15_6_10)
    res = prom_from_wrapped(wrapped_at(45.0, vencs), np.eye(3), offset=-30.0)
    assert res.v_hat == pytest.approx(-15.0, abs=1e-9)
    for cand in res.candidates:
        assert -30.0 <= cand.v_hat < 30.0


def test_prom_tie_break_lexicographic():
    # symmetric inputs make two candidates score identically; the smaller
    # wrap vector must win, deterministically
    vencs = VencSet(np.array([15.0, 6.0, 10.0]))
    vt = vencs.venc.copy()  # exactly half a period everywhere
    res = prom_from_wrapped(WrappedVelocities(vt, vencs), np.eye(3))
    res2 = prom_from_wrapped(WrappedVelocities(vt, vencs), np.eye(3))
    assert res.v_hat == res2.v_hat
    ties = [c for c in res.candidates
            if abs(c.nll - res.candidates[0].nll) < 1e-15]
    if len(ties) > 1:
        best_k = min(tuple(c.k) for c in ties)
        assert tuple(res.candidates[0].k) == best_k


def test_prom_estimate_data_and_model_paths(scheme_15_6_10):
    rng = np.random.default_rng(6)
    snr = SnrMatrix.from_per_encoding(np.array([10.0, 20.0, 10.0]), 1)
    v = 23.7
    y = noiseless_voxel(scheme_15_6_10, v, phi0=1.1, amps=snr.s[:, 0])
    y = y + 0.02 * (rng.normal(size=y.shape) + 1j * rng.normal(size=y.shape))
    data_res = prom_estimate(y, scheme_15_6_10)
    model_res = prom_estimate(y, scheme_15_6_10, cov_mode=snr)
    assert not data_res.scale_known
    assert model_res.scale_known
    assert abs(data_res.v_hat - v) < 0.5
    assert abs(model_res.v_hat - v) < 0.5
    with pytest.raises(ValidationError):
        prom_estimate(y, scheme_15_6_10, cov_mode="bogus")
    with pytest.raises(MaskedVoxelError):
        prom_estimate(np.zeros((3, 1), dtype=complex), scheme_15_6_10)


def test_prom_model_bundle(scheme_15_6_10, snr_10_20_10):
    model = PromModel(scheme_15_6_10, snr_10_20_10)
    assert model.omega == pytest.approx(60.0)
    assert list(model.wrap_counts) == [2, 5, 3]
    assert math.isclose(float(np.sum(model.weights)), 1.0, abs_tol=1e-12)
    # predicted variance equals the BLUE quadratic form
    w = model.weights
    assert model.predicted_variance == pytest.approx(
        float(w @ model.sigma_velocity @ w), rel=1e-12)
    # and the estimate path agrees with the standalone function
    vencs = model.vencs
    wrapped = wrapped_at(12.3, vencs)
    a = model.estimate(wrapped)
    b = prom_from_wrapped(wrapped, model.sigma_velocity)
    assert a.v_hat == pytest.approx(b.v_hat, abs=1e-12)
    with pytest.raises(ValidationError):
        PromModel(scheme_15_6_10, SnrMatrix(np.array([1.0, 2.0])))


def test_neg_log_likelihood_formula(scheme_15_6_10):
    vencs = vencs_from_moments(scheme_15_6_10)
    wrapped = wrapped_at(7.0, vencs)
    pinv = np.diag([2.0, 3.0, 4.0])
    v = 9.5
    d = wrapped.v_tilde - v
    d = d - np.rint(d / (2 * vencs.venc)) * 2 * vencs.venc
    assert neg_log_likelihood(wrapped, v, pinv) == pytest.approx(
        0.5 * d @ pinv @ d, rel=1e-12)
    assert neg_log_likelihood(wrapped, 7.0, pinv) == pytest.approx(0.0, abs=1e-18)
