"""Counter-based random number generation for the simulation harness.

Every random draw is a pure function of (seed, trial, draw index), so a
Monte Carlo run produces bit-identical streams regardless of chunking or
thread count.  Both kernel backends implement exactly this scheme; the
numpy forms here are the reference.

Layout per trial: draws are consumed in pairs (one complex noise sample
needs two uniforms), ordered encoding-major then coil, so the sample for
encoding a, coil b uses draw indices 2*(a*num_coils + b) and the one after.
"""

from __future__ import annotations

import numpy as np

GOLD = 0x9E3779B97F4A7C15
SEED_STRIDE = 0xD1342543DE82EF95
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
_U64_MASK = (1 << 64) - 1
_INV_2_53 = 2.0 ** -53

_U = np.uint64


def mix64(z):
    """SplitMix64 finalizer; accepts uint64 scalars or arrays."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _U(30))) * _U(MIX1)
    z = (z ^ (z >> _U(27))) * _U(MIX2)
    z = z ^ (z >> _U(31))
    return z


def mix64_int(z: int) -> int:
    """Pure-python mix64 on masked ints, for seed derivation off the hot path."""
    z &= _U64_MASK
    z = ((z ^ (z >> 30)) * MIX1) & _U64_MASK
    z = ((z ^ (z >> 27)) * MIX2) & _U64_MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, *salts: int) -> int:
    """Stable sub-stream seed from a master seed and integer salts."""
    out = seed & _U64_MASK
    for salt in salts:
        out = mix64_int(out ^ mix64_int((salt & _U64_MASK) + 0x1F123BB5))
    return out


def trial_bases(seed: int, first_trial: int, count: int) -> np.ndarray:
    """Per-trial base states for trials [first_trial, first_trial+count)."""
    t = np.arange(first_trial, first_trial + count, dtype=np.uint64)
    return mix64(_U(seed & _U64_MASK) ^ mix64((t + _U(1)) * _U(SEED_STRIDE)))


def uniforms(bases: np.ndarray, draw_index: int) -> np.ndarray:
    """draw_index'th uniform in (0, 1) for each trial base."""
    offset = ((draw_index + 1) * GOLD) & _U64_MASK
    bits = mix64(bases + _U(offset))
    return ((bits >> _U(11)).astype(np.float64) + 0.5) * _INV_2_53


def complex_noise(bases: np.ndarray, draw_index: int) -> np.ndarray:
    """One circular complex Gaussian sample per trial, total variance 1.

    Consumes draws draw_index and draw_index + 1.
    """
    u1 = uniforms(bases, draw_index)
    u2 = uniforms(bases, draw_index + 1)
    radius = np.sqrt(-np.log(u1))
    return radius * np.exp(2j * np.pi * u2)
