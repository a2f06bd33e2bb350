"""Phase-difference noise covariance models.

For measurement y[a, b] = amplitude * exp(i phase) + complex circular noise,
the coil-combined pair phases theta_ab = angle(sum_b y[a,b] conj(y[b,b]))
have, to second order in 1/SNR, a covariance with:

* diagonal   (sum_b s_a^2 + sum_b s_b^2 + Nc) / (2 * (sum_b s_a s_b)^2)
* off-diagonal, pairs sharing one encoding e: +-Nc / (2 * sum_b s_e^2),
  positive when e plays the same role in both pairs (minuend in both or
  subtrahend in both), negative otherwise
* zero for disjoint pairs

where s is the per-measurement SNR matrix.  The data-driven variant replaces
s by measured magnitudes |y| and drops the +Nc term; it is then correct up to
one unknown positive scale factor, which everything downstream (weights,
likelihood ranking) is invariant to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .congruence import VencSet, canonical_pairs
from .errors import (
    MaskedVoxelError,
    SingularPairError,
    UndefinedSimilarityError,
    ValidationError,
)

__all__ = [
    "SnrMatrix",
    "PhaseCovariance",
    "model_phase_cov",
    "data_phase_cov",
    "psd_project",
    "velocity_cov",
    "cosine_similarity",
]


@dataclass(frozen=True, eq=False)
class SnrMatrix:
    """Per-measurement SNR magnitudes, shape (Ne, Nc), nonnegative."""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        object.__setattr__(self, "s", s)
        if s.ndim != 2 or s.shape[0] < 2:
            raise ValidationError("SNR matrix must have shape (Ne, Nc), Ne >= 2")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValidationError("SNR entries must be finite and nonnegative")

    @classmethod
    def from_per_encoding(cls, s_per_encoding, num_coils: int = 1) -> "SnrMatrix":
        """Expand one SNR value per encoding across ``num_coils`` identical coils."""
        vec = np.asarray(s_per_encoding, dtype=np.float64)
        if vec.ndim != 1:
            raise ValidationError("per-encoding SNR must be a vector")
        if num_coils < 1:
            raise ValidationError("num_coils must be >= 1")
        return cls(np.repeat(vec[:, None], num_coils, axis=1))

    @property
    def num_encodings(self) -> int:
        return int(self.s.shape[0])

    @property
    def num_coils(self) -> int:
        return int(self.s.shape[1])


@dataclass(frozen=True, eq=False)
class PhaseCovariance:
    """Covariance of the pair phases in canonical pair order.

    ``scale_known`` is False for the data-driven form, which is defined only
    up to a common positive factor.
    """

    matrix: np.ndarray
    pairs: list[tuple[int, int]]
    scale_known: bool = True

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("covariance must be square")
        if m.shape[0] != len(self.pairs):
            raise ValidationError("covariance size must match pair count")
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(m).max()))):
            raise ValidationError("covariance must be symmetric")


def _pair_cov_from_moments(first: np.ndarray, second: np.ndarray,
                           pairs: list[tuple[int, int]], num_coils: int,
                           extra_diag: float) -> np.ndarray:
    """Shared assembly for the model and data-driven forms.

    ``first``  : per-encoding sums sum_b m_a^2        (Ne,)
    ``second`` : full magnitude matrix m              (Ne, Nc)
    """
    d = len(pairs)
    cov = np.zeros((d, d))
    cross = second @ second.T  # sum_b m_a m_b
    for i, (a, b) in enumerate(pairs):
        denom = cross[a - 1, b - 1]
        if denom <= 0.0:
            raise SingularPairError(f"pair ({a},{b}) has zero SNR product")
        cov[i, i] = (first[a - 1] + first[b - 1] + extra_diag) / (2.0 * denom * denom)
    for i, (a, b) in enumerate(pairs):
        for j in range(i + 1, d):
            c, dd = pairs[j]
            shared = {a, b} & {c, dd}
            if len(shared) != 1:
                continue
            e = shared.pop()
            if first[e - 1] <= 0.0:
                raise SingularPairError(f"shared encoding {e} has zero SNR")
            same_role = (e == a and e == c) or (e == b and e == dd)
            val = num_coils / (2.0 * first[e - 1])
            cov[i, j] = cov[j, i] = val if same_role else -val
    return cov


def model_phase_cov(snr: SnrMatrix, pairs: list[tuple[int, int]] | None = None) -> PhaseCovariance:
    """Second-order phase covariance from known per-measurement SNR."""
    if pairs is None:
        pairs = canonical_pairs(snr.num_encodings)
    sums = np.sum(snr.s**2, axis=1)
    cov = _pair_cov_from_moments(sums, snr.s, pairs, snr.num_coils, float(snr.num_coils))
    return PhaseCovariance(cov, pairs, scale_known=True)


def data_phase_cov(y: np.ndarray, pairs: list[tuple[int, int]] | None = None) -> PhaseCovariance:
    """Data-driven phase covariance from measured magnitudes, up to scale.

    Substitutes |y| for the SNR matrix, drops the +Nc diagonal term, and
    projects the result onto the positive semidefinite cone.
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] < 2:
        raise ValidationError("y must have shape (Ne, Nc) with Ne >= 2")
    mags = np.abs(y)
    if not np.all(np.isfinite(mags)):
        raise ValidationError("y entries must be finite")
    if np.all(mags == 0.0):
        raise MaskedVoxelError("all-zero voxel: no covariance information")
    if pairs is None:
        pairs = canonical_pairs(y.shape[0])
    sums = np.sum(mags**2, axis=1)
    cov = _pair_cov_from_moments(sums, mags, pairs, y.shape[1], 0.0)
    return PhaseCovariance(psd_project(cov), pairs, scale_known=False)


def psd_project(matrix: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) positive semidefinite matrix: symmetrize, clamp eigenvalues."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("psd_project expects a square matrix")
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def velocity_cov(phase_cov: PhaseCovariance, vencs: VencSet) -> np.ndarray:
    """Velocity-domain covariance diag(venc/pi) PSD(cov_theta) diag(venc/pi)."""
    if len(phase_cov.pairs) != vencs.venc.size:
        raise ValidationError("phase covariance and venc set disagree on pair count")
    scale = vencs.venc / np.pi
    return psd_project(phase_cov.matrix) * np.outer(scale, scale)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius cosine similarity <a, b> / (||a|| ||b||)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("matrices must share a shape")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine similarity undefined for a zero matrix")
    return float(np.sum(a * b) / (na * nb))
