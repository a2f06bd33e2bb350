import math

import numpy as np
import pytest

from promkit import (
    EncodingScheme,
    NoFiniteRangeError,
    UnsupportedGeometryError,
    ValidationError,
    VencSet,
    canonical_pairs,
    pair_products,
    rationalize,
    symmetric_moments_from_vencs,
    unambiguous_range,
    vencs_from_moments,
    wrap_to_range,
    wrapped_displacement,
    wrapped_from_products,
)
from promkit.errors import DegenerateEncodingError, SingularPairError

from conftest import noiseless_voxel


def test_canonical_pairs_order():
    assert canonical_pairs(3) == [(2, 1), (3, 1), (3, 2)]
    assert canonical_pairs(4) == [(2, 1), (3, 1), (3, 2), (4, 1), (4, 2), (4, 3)]
    with pytest.raises(ValidationError):
        canonical_pairs(1)


def test_encoding_scheme_requires_increasing_moments():
    EncodingScheme(np.array([-1.0, 0.0, 1.0]))
    with pytest.raises(DegenerateEncodingError):
        EncodingScheme(np.array([0.0, 0.0, 1.0]))
    with pytest.raises(DegenerateEncodingError):
        EncodingScheme(np.array([1.0, 0.0]))
    with pytest.raises(DegenerateEncodingError):
        EncodingScheme(np.array([0.0, np.nan]))
    with pytest.raises(DegenerateEncodingError):
        EncodingScheme(np.array([0.5]))


def test_rationalize_basic():
    assert rationalize(1.4) == (7, 5)
    assert rationalize(2.0) == (2, 1)
    assert rationalize(1.0 / 3.0) == (1, 3)
    # best fraction with a small denominator cap is not close enough
    assert rationalize(math.pi, max_denominator=50) is None
    # a ratio needing a denominator beyond the default cap
    assert rationalize(1.0 + 1e-7 * math.pi) is None
    with pytest.raises(ValidationError):
        rationalize(-1.0)
    with pytest.raises(ValidationError):
        rationalize(0.0)


def test_symmetric_moments_reproduce_vencs():
    scheme = symmetric_moments_from_vencs(10.0, 14.0)
    vencs = vencs_from_moments(scheme)
    # venc21 = venc31 * venc32 / (venc32 - venc31)
    assert np.allclose(vencs.venc, [35.0, 10.0, 14.0], rtol=1e-12)
    assert scheme.gamma_m1[2] == -scheme.gamma_m1[0]
    assert math.isclose(scheme.gamma_m1[0], -math.pi / 20.0)


def test_symmetric_moments_ratio_bounds():
    with pytest.raises(UnsupportedGeometryError):
        symmetric_moments_from_vencs(10.0, 20.0)  # ratio 2: middle collides
    with pytest.raises(UnsupportedGeometryError):
        symmetric_moments_from_vencs(10.0, 10.0)
    with pytest.raises(UnsupportedGeometryError):
        symmetric_moments_from_vencs(10.0, 5.0)
    with pytest.raises(ValidationError):
        symmetric_moments_from_vencs(-10.0, 14.0)


@pytest.mark.parametrize("venc,omega,h", [
    ([35.0, 10.0, 14.0], 140.0, [2, 7, 5]),
    ([15.0, 6.0, 10.0], 60.0, [2, 5, 3]),
    ([99.0, 18.0, 22.0], 396.0, [2, 11, 9]),
    ([60.0, 20.0, 30.0], 120.0, [1, 3, 2]),
])
def test_unambiguous_range_oracles(venc, omega, h):
    vs = VencSet(np.array(venc))
    assert math.isclose(vs.range(), omega, rel_tol=1e-12)
    assert list(vs.wrap_counts()) == h
    # h_i = Omega / (2 venc_i) exactly
    for hi, vi in zip(h, venc):
        assert math.isclose(hi, omega / (2.0 * vi), rel_tol=1e-12)


def test_range_scales_linearly():
    a = VencSet(np.array([15.0, 6.0, 10.0]))
    b = VencSet(np.array([15.0, 6.0, 10.0]) * 3.7)
    assert math.isclose(b.range(), 3.7 * a.range(), rel_tol=1e-12)
    assert list(a.wrap_counts()) == list(b.wrap_counts())


def test_incommensurable_vencs_have_no_range():
    vs = VencSet(np.array([1.0, 1.0 + 1e-7 * math.pi, 1.5]))
    assert vs.rational_form is None
    with pytest.raises(NoFiniteRangeError):
        vs.range()
    with pytest.raises(NoFiniteRangeError):
        vs.wrap_counts()


def test_vencset_validation():
    with pytest.raises(ValidationError):
        VencSet(np.array([1.0, -2.0, 3.0]))
    with pytest.raises(ValidationError):
        VencSet(np.array([1.0, np.inf, 3.0]))
    with pytest.raises(ValidationError):
        VencSet(np.array([1.0, 2.0]))  # 2 is not a full pair count
    with pytest.raises(ValidationError):
        VencSet(np.array([1.0, 2.0, 3.0]), pairs=[(2, 1)])


def test_wrap_to_range():
    assert wrap_to_range(7.0, 5.0, 0.0) == 2.0
    assert wrap_to_range(-1.0, 5.0, 0.0) == 4.0
    assert wrap_to_range(0.0, 5.0, 0.0) == 0.0
    # upper edge maps back to the lower edge
    assert wrap_to_range(2.5, 5.0, -2.5) == -2.5
    out = wrap_to_range(np.array([-7.6, 0.0, 12.2]), 10.0, -5.0)
    assert np.allclose(out, [2.4, 0.0, 2.2])
    assert np.all(out >= -5.0) and np.all(out < 5.0)


def test_wrapped_displacement_shortest_path():
    assert wrapped_displacement(1.0, 0.0, 10.0) == 1.0
    assert wrapped_displacement(9.5, 0.0, 10.0) == -0.5
    d = wrapped_displacement(np.array([0.2, 19.9]), 0.0, np.array([2.0, 20.0]))
    assert np.allclose(d, [0.2, -0.1])
    with pytest.raises(ValidationError):
        wrapped_displacement(1.0, 0.0, 0.0)


def test_pair_products_phase_differences():
    rng = np.random.default_rng(5)
    phases = rng.uniform(-math.pi, math.pi, 3)
    y = np.exp(1j * phases)[:, None] * np.array([1.5, 0.5 + 1j])[None, :]
    r = pair_products(y)
    for (a, b), r_ab in zip(canonical_pairs(3), r):
        expect = phases[a - 1] - phases[b - 1]
        assert math.isclose(math.remainder(np.angle(r_ab) - expect, 2 * math.pi),
                            0.0, abs_tol=1e-12)


def test_wrapped_from_products_noiseless():
    scheme = symmetric_moments_from_vencs(6.0, 10.0)
    vencs = vencs_from_moments(scheme)
    for v in (-41.3, 0.0, 3.25, 59.99):
        y = noiseless_voxel(scheme, v, phi0=0.7)
        wrapped = wrapped_from_products(pair_products(y), vencs)
        expect = np.mod(v, 2.0 * vencs.venc)
        assert np.allclose(wrapped.v_tilde, expect, atol=1e-9)
        assert np.all(wrapped.v_tilde >= 0)
        assert np.all(wrapped.v_tilde < 2.0 * vencs.venc)


def test_wrapped_from_products_rejects_zero():
    vencs = VencSet(np.array([15.0, 6.0, 10.0]))
    with pytest.raises(SingularPairError):
        wrapped_from_products(np.array([1.0, 0.0, 1.0], dtype=complex), vencs)
    with pytest.raises(ValidationError):
        wrapped_from_products(np.array([1.0, 1.0], dtype=complex), vencs)
