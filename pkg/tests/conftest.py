import numpy as np
import pytest

from promkit import SnrMatrix, symmetric_moments_from_vencs


@pytest.fixture
def scheme_15_6_10():
    """Three-point scheme with pair vencs [15, 6, 10]."""
    return symmetric_moments_from_vencs(6.0, 10.0)


@pytest.fixture
def scheme_35_10_14():
    """Three-point scheme with pair vencs [35, 10, 14]."""
    return symmetric_moments_from_vencs(10.0, 14.0)


@pytest.fixture
def snr_10_20_10():
    return SnrMatrix.from_per_encoding(np.array([10.0, 20.0, 10.0]), 1)


def noiseless_voxel(scheme, v, phi0=0.0, amps=None, sens=None):
    """Clean (Ne, Nc) measurement matrix at velocity v."""
    gm = scheme.gamma_m1
    if amps is None:
        amps = np.ones(gm.size)
    if sens is None:
        sens = np.ones(1, dtype=np.complex128)
    carrier = np.exp(1j * (phi0 + gm * v))
    return (np.asarray(amps) * carrier)[:, None] * np.asarray(sens)[None, :]
