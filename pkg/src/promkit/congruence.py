"""Congruence arithmetic for wrapped velocity measurements.

A velocity encoding with first-moment products ``gamma_m1`` (rad s/cm) maps a
voxel velocity v to measurement phases gamma_m1[a] * v.  Every ordered pair
(a, b) with a > b yields a phase difference that aliases with period
2 * venc_ab, where venc_ab = pi / (gamma_m1[a] - gamma_m1[b]).  This module
holds the bookkeeping common to every estimator: venc vectors in canonical
pair order, the joint unambiguous range Omega (the LCM of the pair periods,
computed exactly through a rational decomposition), and wrapped displacement /
interval-mapping primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (
    DegenerateEncodingError,
    NoFiniteRangeError,
    SingularPairError,
    UnsupportedGeometryError,
    ValidationError,
)

__all__ = [
    "EncodingScheme",
    "VencSet",
    "WrappedVelocities",
    "canonical_pairs",
    "vencs_from_moments",
    "symmetric_moments_from_vencs",
    "rationalize",
    "unambiguous_range",
    "wrapped_displacement",
    "wrap_to_range",
    "pair_products",
    "wrapped_from_products",
]

# Rationalization defaults: best rational approximation by continued fractions
# with a capped denominator; ratios further than REL_TOL from every such
# fraction are treated as incommensurable.
MAX_DENOMINATOR = 10**6
RATIO_REL_TOL = 1e-9


def canonical_pairs(num_encodings: int) -> list[tuple[int, int]]:
    """Ordered pairs (a, b), a > b, 1-based: (2,1), (3,1), (3,2), (4,1), ..."""
    if num_encodings < 2:
        raise ValidationError("need at least two encodings")
    return [(a, b) for a in range(2, num_encodings + 1) for b in range(1, a)]


@dataclass(frozen=True, eq=False)
class EncodingScheme:
    """First-moment products gamma_m1 (rad s/cm), strictly increasing."""

    gamma_m1: np.ndarray

    def __post_init__(self):
        gm = np.asarray(self.gamma_m1, dtype=np.float64)
        object.__setattr__(self, "gamma_m1", gm)
        if gm.ndim != 1 or gm.size < 2:
            raise DegenerateEncodingError("gamma_m1 must be a vector of length >= 2")
        if not np.all(np.isfinite(gm)):
            raise DegenerateEncodingError("gamma_m1 entries must be finite")
        if not np.all(np.diff(gm) > 0):
            raise DegenerateEncodingError("gamma_m1 entries must be strictly increasing")

    @property
    def num_encodings(self) -> int:
        return int(self.gamma_m1.size)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return canonical_pairs(self.num_encodings)


def rationalize(x: float, max_denominator: int = MAX_DENOMINATOR,
                rel_tol: float = RATIO_REL_TOL) -> tuple[int, int] | None:
    """Best rational p/q approximation of x > 0 with q <= max_denominator.

    Returns None when no such fraction lies within rel_tol * x of x.
    """
    if not (x > 0 and math.isfinite(x)):
        raise ValidationError("rationalize expects a positive finite ratio")
    frac = Fraction(x).limit_denominator(max_denominator)
    if frac.numerator <= 0:
        return None
    if abs(float(frac) - x) <= rel_tol * x:
        return frac.numerator, frac.denominator
    return None


def _rational_form(venc: np.ndarray) -> tuple[float, np.ndarray] | None:
    """Decompose venc as scale * integers (componentwise), or None."""
    fracs = []
    for ratio in venc / venc[0]:
        pq = rationalize(float(ratio))
        if pq is None:
            return None
        fracs.append(Fraction(*pq))
    denom = math.lcm(*(f.denominator for f in fracs))
    ints = np.array([f.numerator * (denom // f.denominator) for f in fracs], dtype=object)
    g = math.gcd(*(int(v) for v in ints))
    ints = ints // g
    ints_f = ints.astype(np.float64)
    # least-squares scale: exact-rational inputs land at ~1 ulp
    scale = float(np.dot(venc, ints_f) / np.dot(ints_f, ints_f))
    if np.max(np.abs(scale * ints_f - venc) / venc) > RATIO_REL_TOL:
        return None
    return scale, ints


@dataclass(frozen=True, eq=False)
class VencSet:
    """Pair aliasing velocities (cm/s) in canonical pair order."""

    venc: np.ndarray
    pairs: list[tuple[int, int]] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        v = np.asarray(self.venc, dtype=np.float64)
        object.__setattr__(self, "venc", v)
        if v.ndim != 1 or v.size < 1:
            raise ValidationError("venc must be a non-empty vector")
        if not np.all(np.isfinite(v)) or not np.all(v > 0):
            raise ValidationError("venc entries must be positive and finite")
        if self.pairs is None:
            # infer Ne from D = Ne(Ne-1)/2
            ne = round((1 + math.isqrt(1 + 8 * v.size)) / 2)
            if ne * (ne - 1) // 2 != v.size:
                raise ValidationError(
                    "venc length is not a full pair count; pass pairs explicitly")
            object.__setattr__(self, "pairs", canonical_pairs(ne))
        if len(self.pairs) != v.size:
            raise ValidationError("pairs and venc must have equal length")
        object.__setattr__(self, "_rational", _rational_form(v))

    @property
    def rational_form(self) -> tuple[float, np.ndarray] | None:
        """(scale, integer vector) with venc = scale * integers, or None."""
        return self._rational

    def range(self) -> float:
        return unambiguous_range(self)

    def wrap_counts(self) -> np.ndarray:
        """h = Omega / (2 venc), exact positive integers."""
        if self._rational is None:
            raise NoFiniteRangeError("venc ratios are incommensurable")
        _, ints = self._rational
        lcm = math.lcm(*(int(v) for v in ints))
        return np.array([lcm // int(v) for v in ints], dtype=np.int64)


def vencs_from_moments(scheme: EncodingScheme) -> VencSet:
    """venc_ab = pi / (gamma_m1[a] - gamma_m1[b]) over canonical pairs."""
    gm = scheme.gamma_m1
    venc = np.array([math.pi / (gm[a - 1] - gm[b - 1]) for a, b in scheme.pairs])
    return VencSet(venc, scheme.pairs)


def symmetric_moments_from_vencs(venc31: float, venc32: float) -> EncodingScheme:
    """Three-point moments with gamma_m1[2] = -gamma_m1[0] from two pair vencs.

    Requires 1 < venc32/venc31 < 2 so that the middle encoding sits strictly
    between the outer ones.
    """
    if not (venc31 > 0 and venc32 > 0):
        raise ValidationError("vencs must be positive")
    ratio = venc32 / venc31
    if not (1.0 < ratio < 2.0):
        raise UnsupportedGeometryError(
            f"venc32/venc31 = {ratio:.6g} outside the supported open interval (1, 2)")
    gm1 = -math.pi / (2.0 * venc31)
    gm2 = math.pi / (2.0 * venc31) - math.pi / venc32
    gm3 = -gm1
    return EncodingScheme(np.array([gm1, gm2, gm3]))


def unambiguous_range(vencs: VencSet) -> float:
    """Omega = LCM of the pair periods 2*venc, exact via the rational form."""
    if vencs.rational_form is None:
        raise NoFiniteRangeError(
            "venc ratios admit no rational decomposition; no finite joint range")
    scale, ints = vencs.rational_form
    lcm = math.lcm(*(int(v) for v in ints))
    return 2.0 * scale * float(lcm)


def wrapped_displacement(x, y, period):
    """Shortest signed displacement x - y modulo period.

    Elementwise d = x - y - rint((x - y) / period) * period, with rint's
    half-to-even tie rule, so d lies in [-period/2, period/2].
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    period = np.asarray(period, dtype=np.float64)
    if np.any(period <= 0):
        raise ValidationError("period must be positive")
    diff = x - y
    return diff - np.rint(diff / period) * period


def wrap_to_range(v, omega: float, offset: float = 0.0):
    """Map v into [offset, offset + omega) by shifting integer multiples of omega."""
    if not (omega > 0 and math.isfinite(omega)):
        raise ValidationError("omega must be positive and finite")
    v = np.asarray(v, dtype=np.float64)
    out = v - np.floor((v - offset) / omega) * omega
    # floating-point guard at the upper seam
    out = np.where(out >= offset + omega, out - omega, out)
    out = np.where(out < offset, out + omega, out)
    return out if out.ndim else float(out)


def pair_products(y: np.ndarray, pairs: list[tuple[int, int]] | None = None) -> np.ndarray:
    """Coil-combined conjugate products r_ab = sum_coils y[a] * conj(y[b]).

    ``y`` has shape (Ne, Nc); returns one complex value per canonical pair.
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] < 2:
        raise ValidationError("y must have shape (Ne, Nc) with Ne >= 2")
    if not np.all(np.isfinite(y.view(np.float64))):
        raise ValidationError("y entries must be finite")
    if pairs is None:
        pairs = canonical_pairs(y.shape[0])
    return np.array([np.vdot(y[b - 1], y[a - 1]) for a, b in pairs])


def wrapped_from_products(r: np.ndarray, vencs: VencSet) -> "WrappedVelocities":
    """Wrapped pair velocities from conjugate products: angle(r)/pi * venc."""
    r = np.asarray(r, dtype=np.complex128)
    if r.shape != vencs.venc.shape:
        raise ValidationError("product vector length must match venc length")
    if np.any(r == 0):
        raise SingularPairError("zero pair product: phase difference undefined")
    theta = np.angle(r) % (2.0 * math.pi)
    theta[theta >= 2.0 * math.pi] = 0.0
    v_tilde = theta / math.pi * vencs.venc
    v_tilde[v_tilde >= 2.0 * vencs.venc] = 0.0
    return WrappedVelocities(v_tilde, vencs)


@dataclass(frozen=True, eq=False)
class WrappedVelocities:
    """Per-pair wrapped velocities, each in [0, 2*venc_ab)."""

    v_tilde: np.ndarray
    vencs: VencSet

    def __post_init__(self):
        vt = np.asarray(self.v_tilde, dtype=np.float64)
        object.__setattr__(self, "v_tilde", vt)
        if vt.shape != self.vencs.venc.shape:
            raise ValidationError("v_tilde length must match venc length")
        if np.any(vt < 0) or np.any(vt >= 2.0 * self.vencs.venc):
            raise ValidationError("v_tilde entries must lie in [0, 2*venc)")

    @classmethod
    def from_phases(cls, theta, vencs: VencSet) -> "WrappedVelocities":
        theta = np.mod(np.asarray(theta, dtype=np.float64), 2.0 * math.pi)
        theta[theta >= 2.0 * math.pi] = 0.0
        return cls(theta / math.pi * vencs.venc, vencs)
