import math

import numpy as np
import pytest

from promkit import (
    NonIdentifiableError,
    PromModel,
    SnrMatrix,
    ValidationError,
    VencSet,
    crlb_velocity,
    estimate_distribution,
    symmetric_moments_from_vencs,
    tube_label,
    unwrap_error_prob,
)


def fd_crlb(v, phi0, amps, sens, sigma, scheme, step=1e-6):
    """Finite-difference CRLB oracle over [v, phi0, A..., Re/Im S_2..]."""
    amps = np.asarray(amps, dtype=np.float64)
    sens = np.asarray(sens, dtype=np.complex128)

    def stacked(theta):
        vv, p0 = theta[0], theta[1]
        ne = scheme.num_encodings
        a = theta[2:2 + ne]
        s = sens.copy()
        rest = theta[2 + ne:]
        for beta in range(1, sens.size):
            s[beta] = rest[2 * (beta - 1)] + 1j * rest[2 * (beta - 1) + 1]
        mu = ((a * np.exp(1j * (p0 + scheme.gamma_m1 * vv)))[:, None]
              * s[None, :]).ravel()
        return np.concatenate([mu.real, mu.imag])

    theta0 = np.concatenate([
        [v, phi0], amps,
        np.stack([sens[1:].real, sens[1:].imag], axis=1).ravel(),
    ])
    jac = np.empty((2 * scheme.num_encodings * sens.size, theta0.size))
    for i in range(theta0.size):
        hi, lo = theta0.copy(), theta0.copy()
        hi[i] += step
        lo[i] -= step
        jac[:, i] = (stacked(hi) - stacked(lo)) / (2.0 * step)
    fim = (2.0 / sigma ** 2) * jac.T @ jac
    return float(np.linalg.inv(fim)[0, 0])


def test_tube_label_common_shift_invariance(scheme_15_6_10, snr_10_20_10):
    model = PromModel(scheme_15_6_10, snr_10_20_10)
    rng = np.random.default_rng(42)
    for _ in range(200):
        noise = rng.normal(0.0, 4.0, size=3)
        eta = rng.uniform(-100.0, 100.0)
        v = rng.uniform(-30.0, 30.0)
        assert np.array_equal(tube_label(noise + eta, v, model),
                              tube_label(noise, v, model))


def test_tube_label_values(scheme_15_6_10, snr_10_20_10):
    model = PromModel(scheme_15_6_10, snr_10_20_10)
    label = tube_label(np.zeros(3), 3.0, model)
    assert np.array_equal(label, np.zeros(3, dtype=np.int64))
    label = tube_label(np.array([0.3, -0.2, 0.1]), -7.0, model)
    assert np.all(label >= 0) and np.all(label < model.wrap_counts)
    with pytest.raises(ValidationError):
        tube_label(np.zeros(4), 0.0, model)


def test_distribution_high_snr_single_lobe(scheme_15_6_10, snr_10_20_10):
    comps = estimate_distribution(5.0, snr_10_20_10, scheme_15_6_10,
                                  trials=2000, seed=3)
    assert comps[0].label == (0, 0, 0)
    assert comps[0].weight > 0.999
    assert comps[0].center == pytest.approx(5.0, abs=1e-9)
    assert comps[0].variance > 0.0


def test_distribution_weights_velocity_invariant(scheme_15_6_10):
    snr = SnrMatrix.from_per_encoding([2.0, 4.0, 2.0], 1)
    a = estimate_distribution(0.0, snr, scheme_15_6_10, trials=4000, seed=9)
    b = estimate_distribution(7.3, snr, scheme_15_6_10, trials=4000, seed=9)
    assert [c.label for c in a] == [c.label for c in b]
    assert [c.weight for c in a] == [c.weight for c in b]
    for ca, cb in zip(a, b):
        gap = (cb.center - ca.center - 7.3) / 60.0
        assert gap == pytest.approx(round(gap), abs=1e-9)


def test_distribution_window_and_order(scheme_15_6_10):
    snr = SnrMatrix.from_per_encoding([1.5, 3.0, 1.5], 1)
    comps = estimate_distribution(0.0, snr, scheme_15_6_10, trials=3000,
                                  seed=1, top_m=4, offset=0.0)
    assert len(comps) <= 4
    weights = [c.weight for c in comps]
    assert weights == sorted(weights, reverse=True)
    assert sum(weights) <= 1.0 + 1e-12
    assert all(0.0 <= c.center < 60.0 for c in comps)
    centers = [round(c.center, 6) for c in comps]
    assert len(set(centers)) == len(centers)
    with pytest.raises(ValidationError):
        estimate_distribution(0.0, snr, scheme_15_6_10, trials=0)


def test_unwrap_error_prob_venc_scale_invariant():
    snr = SnrMatrix.from_per_encoding([2.0, 4.0, 2.0], 1)
    a = unwrap_error_prob(snr, VencSet(np.array([15.0, 6.0, 10.0])),
                          trials=20000, seed=5)
    b = unwrap_error_prob(snr, VencSet(np.array([150.0, 60.0, 100.0])),
                          trials=20000, seed=5)
    assert a == b  # same draws, scale-free decision
    assert 0.0 < a < 1.0


def test_unwrap_error_prob_falls_with_snr(scheme_15_6_10):
    vencs = VencSet(np.array([15.0, 6.0, 10.0]))
    lo = unwrap_error_prob(SnrMatrix.from_per_encoding([1.5, 3.0, 1.5], 1),
                           vencs, trials=20000, seed=2)
    hi = unwrap_error_prob(SnrMatrix.from_per_encoding([4.0, 8.0, 4.0], 1),
                           vencs, trials=20000, seed=2)
    assert hi < lo
    with pytest.raises(ValidationError):
        unwrap_error_prob(SnrMatrix.from_per_encoding([2.0, 4.0, 2.0], 1),
                          VencSet(np.array([15.0, 6.0])), trials=100)


def test_crlb_matches_fd_oracle_single_coil(scheme_15_6_10):
    amps = np.array([5.0, 10.0, 5.0])
    got = crlb_velocity(2.0, 0.4, amps, np.array([1.0]), 1.0, scheme_15_6_10)
    want = fd_crlb(2.0, 0.4, amps, np.array([1.0 + 0.0j]), 1.0,
                   scheme_15_6_10)
    assert got == pytest.approx(want, rel=1e-5)


def test_crlb_matches_fd_oracle_multi_coil(scheme_15_6_10):
    amps = np.array([3.0, 7.0, 4.0])
    sens = np.array([1.0, 0.6 - 0.3j, -0.2 + 0.9j])
    got = crlb_velocity(-4.0, 1.1, amps, sens, 0.7, scheme_15_6_10)
    want = fd_crlb(-4.0, 1.1, amps, sens, 0.7, scheme_15_6_10)
    assert got == pytest.approx(want, rel=1e-4)


def test_crlb_frozen_value(scheme_15_6_10):
    got = crlb_velocity(0.0, 0.0, np.array([5.0, 10.0, 5.0]),
                        np.array([1.0]), 1.0, scheme_15_6_10)
    assert math.sqrt(got) == pytest.approx(0.376979, abs=2e-6)


def test_crlb_snr_scaling(scheme_15_6_10):
    amps = np.array([5.0, 10.0, 5.0])
    base = crlb_velocity(0.0, 0.0, amps, np.array([1.0]), 1.0, scheme_15_6_10)
    double = crlb_velocity(0.0, 0.0, 2.0 * amps, np.array([1.0]), 1.0,
                           scheme_15_6_10)
    half_sigma = crlb_velocity(0.0, 0.0, amps, np.array([1.0]), 0.5,
                               scheme_15_6_10)
    assert double == pytest.approx(base / 4.0, rel=1e-12)
    assert half_sigma == pytest.approx(base / 4.0, rel=1e-12)


def test_crlb_gauge_and_operating_point(scheme_15_6_10):
    amps = np.array([4.0, 9.0, 4.0])
    sens = np.array([1.0, 0.5 + 0.5j])
    base = crlb_velocity(0.0, 0.0, amps, sens, 1.0, scheme_15_6_10)
    rotated = crlb_velocity(0.0, 0.0, amps, sens * np.exp(0.7j), 1.0,
                            scheme_15_6_10)
    moved = crlb_velocity(7.0, 1.2, amps, sens, 1.0, scheme_15_6_10)
    assert rotated == pytest.approx(base, rel=1e-9)
    assert moved == pytest.approx(base, rel=1e-9)


def test_crlb_validation(scheme_15_6_10):
    with pytest.raises(ValidationError):
        crlb_velocity(0.0, 0.0, np.array([1.0, 2.0]), np.array([1.0]), 1.0,
                      scheme_15_6_10)
    with pytest.raises(ValidationError):
        crlb_velocity(0.0, 0.0, np.array([1.0, 2.0, 1.0]), np.array([1.0]),
                      0.0, scheme_15_6_10)
    with pytest.raises(NonIdentifiableError):
        crlb_velocity(0.0, 0.0, np.zeros(3), np.array([1.0]), 1.0,
                      scheme_15_6_10)
