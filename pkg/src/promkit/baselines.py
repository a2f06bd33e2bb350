"""Reference estimators: dual-venc unwrapping, phasor grid searches, grid MLE."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .congruence import EncodingScheme, VencSet, WrappedVelocities, vencs_from_moments
from .errors import UnsupportedGeometryError, ValidationError

__all__ = [
    "GridSpec",
    "sdv_estimate",
    "odv_objective",
    "odv_estimate",
    "nco_objective",
    "nco_estimate",
    "complex_mle_grid",
]

GRID_DIVISOR = 1000  # default spacing is the fine-pair venc over this


@dataclass(frozen=True)
class GridSpec:
    """Uniform search grid [lo, hi) with fixed step, all in cm/s."""

    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)
                and math.isfinite(self.step)):
            raise ValidationError("grid bounds and step must be finite")
        if not self.lo < self.hi:
            raise ValidationError("grid needs lo < hi")
        if not 0.0 < self.step <= self.hi - self.lo:
            raise ValidationError("grid step must be in (0, hi - lo]")

    @classmethod
    def default_for(cls, vencs: VencSet) -> "GridSpec":
        omega = vencs.range()
        return cls(-0.5 * omega, 0.5 * omega, float(vencs.venc[1]) / GRID_DIVISOR)

    def values(self) -> np.ndarray:
        # guard keeps an exactly divisible span from emitting the hi endpoint
        count = int(math.ceil((self.hi - self.lo) / self.step - 1e-9))
        return self.lo + self.step * np.arange(max(count, 1))


def _require_three_point(vencs: VencSet) -> None:
    if len(vencs.pairs) < 3 or vencs.pairs[:3] != [(2, 1), (3, 1), (3, 2)]:
        raise UnsupportedGeometryError(
            "estimator needs canonical three-point pairs (2,1), (3,1), (3,2)")


def sdv_estimate(v_tilde: WrappedVelocities, mode: str = "corrected") -> float:
    """Dual-venc unwrap of the fine pair (3,1) guided by the coarse pair (2,1).

    ``corrected`` shifts the fine measurement by the rounded lobe ratio;
    ``as_printed`` reproduces the published window rule, which returns values
    anchored on the coarse measurement instead.  Values are used exactly as
    stored, so callers wanting a centered window shift inputs beforehand.
    """
    _require_three_point(v_tilde.vencs)
    vt21 = float(v_tilde.v_tilde[0])
    vt31 = float(v_tilde.v_tilde[1])
    venc21 = float(v_tilde.vencs.venc[0])
    venc31 = float(v_tilde.vencs.venc[1])
    ratio = (vt21 - vt31) / (2.0 * venc31)
    if mode == "corrected":
        lobes = float(np.rint(ratio))
        cap = float(math.floor(venc21 / venc31))
        lobes = min(max(lobes, -cap), cap)
        return vt31 + 2.0 * lobes * venc31
    if mode == "as_printed":
        for lo, hi, shift in ((-2.4, -1.6, -4.0), (-1.2, -0.8, -2.0),
                              (0.8, 1.2, 2.0), (1.6, 2.4, 4.0)):
            if lo < ratio < hi:
                return vt21 + shift * venc31
        return vt21
    raise ValidationError("sdv mode must be 'corrected' or 'as_printed'")


def odv_objective(v, v_tilde: WrappedVelocities) -> np.ndarray:
    """Unweighted phasor misfit of pairs (3,1) and (3,2) at velocities v."""
    _require_three_point(v_tilde.vencs)
    v = np.asarray(v, dtype=np.float64)
    cost = np.zeros(v.shape, dtype=np.float64)
    for idx in (1, 2):
        venc = float(v_tilde.vencs.venc[idx])
        theta = math.pi * float(v_tilde.v_tilde[idx]) / venc
        cost += 1.0 - np.cos(math.pi * v / venc - theta)
    return cost


def odv_estimate(v_tilde: WrappedVelocities, grid: GridSpec | None = None) -> float:
    if grid is None:
        grid = GridSpec.default_for(v_tilde.vencs)
    values = grid.values()
    return float(values[int(np.argmin(odv_objective(values, v_tilde)))])


def nco_objective(v, r31: complex, r32: complex, vencs: VencSet) -> np.ndarray:
    """Magnitude-squared weighted phasor misfit at velocities v."""
    _require_three_point(vencs)
    v = np.asarray(v, dtype=np.float64)
    cost = np.zeros(v.shape, dtype=np.float64)
    for idx, r in ((1, complex(r31)), (2, complex(r32))):
        venc = float(vencs.venc[idx])
        gap = np.exp(1j * math.pi * v / venc) - np.exp(1j * np.angle(r))
        cost += (r.real * r.real + r.imag * r.imag) * np.abs(gap) ** 2
    return cost


def nco_estimate(r31: complex, r32: complex, vencs: VencSet,
                 grid: GridSpec | None = None) -> float:
    if grid is None:
        grid = GridSpec.default_for(vencs)
    values = grid.values()
    return float(values[int(np.argmin(nco_objective(values, r31, r32, vencs)))])


def _support_max_eig(gram: np.ndarray) -> np.ndarray:
    """Largest quadratic-form value over unit vectors with nonnegative entries.

    gram has shape (G, n, n).  Every restriction of the maximizer to its
    positive support is an eigenvector of that principal submatrix, and every
    sign-consistent eigenpair is feasible, so the maximum over all
    sign-consistent eigenpairs of all supports is exact.
    """
    n = gram.shape[-1]
    best = np.full(gram.shape[0], -np.inf)
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            idx = np.asarray(support)
            if size == 1:
                best = np.maximum(best, gram[:, idx[0], idx[0]])
                continue
            sub = gram[:, idx[:, None], idx[None, :]]
            vals, vecs = np.linalg.eigh(sub)
            tol = 1e-12
            nonneg = np.all(vecs >= -tol, axis=1)
            nonpos = np.all(vecs <= tol, axis=1)
            feasible = nonneg | nonpos
            cand = np.where(feasible, vals, -np.inf)
            best = np.maximum(best, cand.max(axis=1))
    return best


def complex_mle_grid(y: np.ndarray, scheme: EncodingScheme,
                     grid: GridSpec | None = None,
                     nonnegative_amplitudes: bool = True,
                     ) -> tuple[float, np.ndarray]:
    """Exhaustive likelihood scan over a velocity grid for one voxel.

    For each grid velocity the per-encoding amplitude vector is maximized
    analytically, leaving the residual trace(R) - lambda(v); the returned
    curve holds that residual per grid point and v_hat is its first minimum.
    Constraining amplitudes to be nonnegative (the default) removes a
    half-range ambiguity of the unconstrained eigenvalue relaxation.
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2 or y.shape[0] != scheme.num_encodings:
        raise ValidationError("y must have shape (Ne, Nc) matching the scheme")
    if grid is None:
        grid = GridSpec.default_for(vencs_from_moments(scheme))
    values = grid.values()
    corr = y @ y.conj().T
    phases = values[:, None] * scheme.gamma_m1[None, :]
    rot = np.exp(1j * phases)
    gram = (corr[None, :, :] * rot[:, None, :] * rot[:, :, None].conj()).real
    gram = 0.5 * (gram + np.swapaxes(gram, 1, 2))
    if nonnegative_amplitudes:
        lam = _support_max_eig(gram)
    else:
        lam = np.linalg.eigvalsh(gram)[:, -1]
    cost = float(np.trace(corr).real) - lam
    v_hat = float(values[int(np.argmin(cost))])
    return v_hat, cost
