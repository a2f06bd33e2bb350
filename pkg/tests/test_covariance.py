import numpy as np
import pytest

from promkit import (
    PhaseCovariance,
    SnrMatrix,
    UndefinedSimilarityError,
    ValidationError,
    VencSet,
    cosine_similarity,
    data_phase_cov,
    model_phase_cov,
    psd_project,
    velocity_cov,
)
from promkit.errors import MaskedVoxelError, SingularPairError


def expected_three_point_cov(s, nc, extra):
    """Hand-built pair-phase covariance for one coil column per encoding.

    s is (3, nc); pairs (2,1), (3,1), (3,2).  extra is the diagonal constant
    (nc in the model form, 0 in the data-driven form).
    """
    sums = np.sum(s * s, axis=1)
    cross = s @ s.T
    c = np.zeros((3, 3))
    for i, (a, b) in enumerate([(2, 1), (3, 1), (3, 2)]):
        c[i, i] = (sums[a - 1] + sums[b - 1] + extra) / (2 * cross[a - 1, b - 1] ** 2)
    c[0, 1] = c[1, 0] = nc / (2 * sums[0])   # share encoding 1, same role
    c[0, 2] = c[2, 0] = -nc / (2 * sums[1])  # share encoding 2, opposite roles
    c[1, 2] = c[2, 1] = nc / (2 * sums[2])   # share encoding 3, same role
    return c


def test_snr_matrix_shapes():
    m = SnrMatrix(np.array([1.0, 2.0, 3.0]))
    assert m.s.shape == (3, 1)
    assert m.num_encodings == 3 and m.num_coils == 1
    m4 = SnrMatrix.from_per_encoding(np.array([1.0, 2.0]), 4)
    assert m4.s.shape == (2, 4)
    assert np.all(m4.s == [[1, 1, 1, 1], [2, 2, 2, 2]])
    with pytest.raises(ValidationError):
        SnrMatrix(np.array([[1.0]]))
    with pytest.raises(ValidationError):
        SnrMatrix(np.array([1.0, -2.0, 3.0]))
    with pytest.raises(ValidationError):
        SnrMatrix.from_per_encoding(np.array([1.0, 2.0]), 0)


def test_model_phase_cov_single_coil_oracle():
    snr = SnrMatrix(np.array([10.0, 20.0, 10.0]))
    got = model_phase_cov(snr)
    assert got.scale_known
    expect = expected_three_point_cov(snr.s, 1, 1.0)
    assert np.allclose(got.matrix, expect, rtol=0, atol=1e-15)


def test_model_phase_cov_multi_coil_oracle():
    rng = np.random.default_rng(3)
    s = rng.uniform(2.0, 9.0, size=(3, 4))
    got = model_phase_cov(SnrMatrix(s))
    expect = expected_three_point_cov(s, 4, 4.0)
    assert np.allclose(got.matrix, expect, rtol=1e-12)


def test_model_phase_cov_rejects_zero_pair():
    with pytest.raises(SingularPairError):
        model_phase_cov(SnrMatrix(np.array([0.0, 1.0, 1.0])))


def test_data_phase_cov_matches_formula_up_to_psd():
    rng = np.random.default_rng(7)
    y = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    got = data_phase_cov(y)
    assert not got.scale_known
    expect = psd_project(expected_three_point_cov(np.abs(y), 2, 0.0))
    assert np.allclose(got.matrix, expect, rtol=1e-12)


def test_data_phase_cov_scale_free():
    rng = np.random.default_rng(11)
    y = rng.normal(size=(3, 1)) + 1j * rng.normal(size=(3, 1))
    a = data_phase_cov(y).matrix
    b = data_phase_cov(10.0 * y).matrix
    # magnitudes scale as m: cov entries scale as 1/m^2
    assert np.allclose(100.0 * b, a, rtol=1e-12)
    assert cosine_similarity(a, b) == pytest.approx(1.0, abs=1e-12)


def test_data_phase_cov_rejects_empty_voxel():
    with pytest.raises(MaskedVoxelError):
        data_phase_cov(np.zeros((3, 2), dtype=complex))


def test_psd_project_identity_on_psd():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 4))
    spd = a @ a.T + 1e-3 * np.eye(4)
    assert np.allclose(psd_project(spd), spd, rtol=1e-10)


def test_psd_project_idempotent():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(5, 5))
    once = psd_project(m)
    twice = psd_project(once)
    assert np.allclose(once, twice, rtol=0, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(once)) >= -1e-12


def test_psd_project_nearest_known_case():
    # eigenpairs of [[1,2],[2,1]] are 3 at (1,1)/sqrt2 and -1 at (1,-1)/sqrt2;
    # clamping the negative one leaves 1.5 everywhere
    m = np.array([[1.0, 2.0], [2.0, 1.0]])
    assert np.allclose(psd_project(m), np.full((2, 2), 1.5), atol=1e-12)
    # diagonal case: negative entries clamp to zero exactly
    assert np.allclose(psd_project(np.diag([1.0, -2.0])), np.diag([1.0, 0.0]))


def test_psd_project_symmetrizes_first():
    m = np.array([[1.0, 4.0], [0.0, 1.0]])
    assert np.allclose(psd_project(m), psd_project(0.5 * (m + m.T)), atol=1e-12)
    with pytest.raises(ValidationError):
        psd_project(np.ones((2, 3)))


def test_velocity_cov_diagonal_scaling():
    snr = SnrMatrix(np.array([10.0, 20.0, 10.0]))
    phase = model_phase_cov(snr)
    vencs = VencSet(np.array([15.0, 6.0, 10.0]))
    got = velocity_cov(phase, vencs)
    scale = vencs.venc / np.pi
    assert np.allclose(got, phase.matrix * np.outer(scale, scale), rtol=1e-12)
    assert np.min(np.linalg.eigvalsh(got)) >= -1e-12
    with pytest.raises(ValidationError):
        velocity_cov(phase, VencSet(np.array([1.0])))


def test_phase_covariance_validation():
    with pytest.raises(ValidationError):
        PhaseCovariance(np.array([[1.0, 0.5], [0.4, 1.0]]), [(2, 1), (3, 1)])
    with pytest.raises(ValidationError):
        PhaseCovariance(np.eye(3), [(2, 1)])


def test_cosine_similarity():
    a = np.eye(2)
    assert cosine_similarity(a, 5.0 * a) == pytest.approx(1.0)
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert cosine_similarity(a, b) == pytest.approx(0.0)
    with pytest.raises(UndefinedSimilarityError):
        cosine_similarity(a, np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        cosine_similarity(a, np.eye(3))
