"""Joint unwrapping velocity estimator (PRoM).

Given wrapped pair velocities v_tilde (each congruent to the voxel velocity
modulo its own 2*venc_ab) and a noise covariance, the estimator:

1. enumerates the wrap-count vectors k that are optimal for some velocity in
   [0, Omega) — a pruned candidate set built from the breakpoints of the
   piecewise-constant map v -> k(v), at most sum(h) vectors instead of the
   prod(h + 2) brute-force lattice;
2. scores each candidate velocity  <w, v_tilde + 2k*venc>  (BLUE combination)
   by one half of the covariance-weighted squared wrapped residual;
3. returns the minimizer, with ties broken by lexicographically smallest k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .congruence import (
    EncodingScheme,
    VencSet,
    WrappedVelocities,
    pair_products,
    unambiguous_range,
    vencs_from_moments,
    wrap_to_range,
    wrapped_displacement,
    wrapped_from_products,
)
from .covariance import (
    PhaseCovariance,
    SnrMatrix,
    data_phase_cov,
    model_phase_cov,
    velocity_cov,
)
from .errors import DegenerateCovarianceError, MaskedVoxelError, ValidationError

__all__ = [
    "CandidateSolution",
    "PromResult",
    "PromModel",
    "spd_pseudo_inverse",
    "blue_weights",
    "candidate_wrap_set",
    "full_search_size",
    "neg_log_likelihood",
    "prom_from_wrapped",
    "prom_estimate",
]

RANK_REL_CUTOFF = 1e-10


def spd_pseudo_inverse(matrix: np.ndarray, rel_cutoff: float = RANK_REL_CUTOFF) -> np.ndarray:
    """Eigen pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below rel_cutoff times the largest are treated as exact zeros,
    which keeps near-rank-deficient covariances stable.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("expected a square matrix")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    top = float(vals[-1])
    if top <= 0.0:
        raise DegenerateCovarianceError("covariance has no positive eigenvalue")
    inv = np.where(vals > rel_cutoff * top, 1.0 / np.where(vals > 0, vals, 1.0), 0.0)
    return (vecs * inv) @ vecs.T


def blue_weights(sigma: np.ndarray, rel_cutoff: float = RANK_REL_CUTOFF) -> np.ndarray:
    """Best-linear-unbiased weights w = pinv(Sigma) 1 / (1' pinv(Sigma) 1)."""
    pinv = spd_pseudo_inverse(sigma, rel_cutoff)
    ones = np.ones(pinv.shape[0])
    raw = pinv @ ones
    denom = float(ones @ raw)
    if denom <= 0.0:
        raise DegenerateCovarianceError(
            "all-ones direction lies outside the covariance's positive eigenspace")
    return raw / denom


def full_search_size(wrap_counts: np.ndarray) -> int:
    """Size of the brute-force wrap lattice {-1 <= k <= h}: prod(h + 2)."""
    h = np.asarray(wrap_counts, dtype=np.int64)
    return int(np.prod(h + 2))


def candidate_wrap_set(wrapped: WrappedVelocities) -> np.ndarray:
    """All wrap-count vectors k(v) = ceil(-1/2 - (v_tilde - v) / (2 venc)), v in [0, Omega).

    The map v -> k(v) is piecewise constant with breakpoints at
    v_tilde_i + (2j+1) venc_i (mod Omega); one representative velocity per
    arc (its midpoint) enumerates every attainable k.  Rows are deduplicated
    and returned in lexicographic order, shape (K, D) with K <= sum(h).
    """
    vencs = wrapped.vencs
    vt = wrapped.v_tilde
    venc = vencs.venc
    omega = unambiguous_range(vencs)
    h = vencs.wrap_counts()

    bps = []
    for i in range(venc.size):
        j = np.arange(h[i], dtype=np.float64)
        bps.append(np.mod(vt[i] + (2.0 * j + 1.0) * venc[i], omega))
    bps = np.sort(np.concatenate(bps))
    # collapse coincident breakpoints (degenerate zero-length arcs)
    keep = np.ones(bps.size, dtype=bool)
    keep[1:] = np.diff(bps) > 1e-9 * omega
    if bps.size > 1 and (bps[-1] - bps[0]) >= omega * (1.0 - 1e-9):
        keep[-1] = False
    bps = bps[keep]

    if bps.size == 1:
        reps = np.array([np.mod(bps[0] + 0.5 * omega, omega)])
    else:
        mids = 0.5 * (bps[1:] + bps[:-1])
        closing = np.mod(0.5 * (bps[-1] + bps[0] + omega), omega)
        reps = np.concatenate([mids, [closing]])

    k = np.ceil(-0.5 - (vt[None, :] - reps[:, None]) / (2.0 * venc[None, :]))
    return np.unique(k.astype(np.int64), axis=0)


def neg_log_likelihood(wrapped: WrappedVelocities, v: float,
                       sigma_pinv: np.ndarray) -> float:
    """One half of the covariance-weighted squared wrapped residual at velocity v."""
    d = wrapped_displacement(wrapped.v_tilde, v, 2.0 * wrapped.vencs.venc)
    return 0.5 * float(d @ sigma_pinv @ d)


@dataclass(frozen=True, eq=False)
class CandidateSolution:
    """One unwrapping hypothesis: wrap counts, its velocity, and its score."""

    k: np.ndarray
    v_hat: float
    nll: float


@dataclass(frozen=True, eq=False)
class PromResult:
    v_hat: float
    candidates: list[CandidateSolution]
    weights: np.ndarray
    wrap_counts: np.ndarray
    omega: float
    offset: float
    sigma_velocity: np.ndarray
    scale_known: bool

    @property
    def predicted_variance(self) -> float:
        """w' Sigma w; an absolute (cm/s)^2 value only when scale_known."""
        return float(self.weights @ self.sigma_velocity @ self.weights)


def prom_from_wrapped(wrapped: WrappedVelocities, sigma_velocity: np.ndarray,
                      offset: float = 0.0, scale_known: bool = True) -> PromResult:
    """Run the candidate search given wrapped velocities and their covariance."""
    vencs = wrapped.vencs
    vt = wrapped.v_tilde
    omega = unambiguous_range(vencs)
    h = vencs.wrap_counts()
    sigma = np.asarray(sigma_velocity, dtype=np.float64)
    pinv = spd_pseudo_inverse(sigma)
    w = blue_weights(sigma)

    k_set = candidate_wrap_set(wrapped)
    cands = []
    best = None
    for row in k_set:
        v_base = float(w @ (vt + 2.0 * row * vencs.venc))
        v_k = wrap_to_range(v_base, omega, 0.0)
        nll = neg_log_likelihood(wrapped, v_k, pinv)
        cand = CandidateSolution(row.copy(), wrap_to_range(v_k, omega, offset), nll)
        cands.append(cand)
        if best is None or (nll, tuple(row)) < (best[0], best[1]):
            best = (nll, tuple(row), cand)
    cands.sort(key=lambda c: (c.nll, tuple(c.k)))
    return PromResult(
        v_hat=best[2].v_hat,
        candidates=cands,
        weights=w,
        wrap_counts=h,
        omega=omega,
        offset=offset,
        sigma_velocity=sigma,
        scale_known=scale_known,
    )


def prom_estimate(y: np.ndarray, scheme: EncodingScheme,
                  cov_mode: str | SnrMatrix = "data",
                  offset: float = 0.0) -> PromResult:
    """Estimate voxel velocity from complex measurements y of shape (Ne, Nc).

    ``cov_mode`` selects the noise model: "data" builds the covariance from
    the measured magnitudes (default reconstruction path); an SnrMatrix uses
    the known-SNR model form.
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] != scheme.num_encodings:
        raise ValidationError("y row count must match the number of encodings")
    if np.all(y == 0):
        raise MaskedVoxelError("all-zero voxel")
    vencs = vencs_from_moments(scheme)
    wrapped = wrapped_from_products(pair_products(y, scheme.pairs), vencs)
    if isinstance(cov_mode, SnrMatrix):
        phase_cov = model_phase_cov(cov_mode, scheme.pairs)
    elif cov_mode == "data":
        phase_cov = data_phase_cov(y, scheme.pairs)
    else:
        raise ValidationError("cov_mode must be 'data' or an SnrMatrix")
    sigma_v = velocity_cov(phase_cov, vencs)
    return prom_from_wrapped(wrapped, sigma_v, offset=offset,
                             scale_known=phase_cov.scale_known)


class PromModel:
    """Precomputed estimator context for a scheme at known SNR.

    Bundles everything the Monte Carlo paths reuse per trial: vencs, Omega,
    wrap counts, model velocity covariance, its pseudo-inverse, and BLUE
    weights.
    """

    def __init__(self, scheme: EncodingScheme, snr: SnrMatrix):
        if snr.num_encodings != scheme.num_encodings:
            raise ValidationError("SNR matrix and scheme disagree on Ne")
        self.scheme = scheme
        self.snr = snr
        self.vencs = vencs_from_moments(scheme)
        self.omega = unambiguous_range(self.vencs)
        self.wrap_counts = self.vencs.wrap_counts()
        self.phase_cov = model_phase_cov(snr, scheme.pairs)
        self.sigma_velocity = velocity_cov(self.phase_cov, self.vencs)
        self.sigma_pinv = spd_pseudo_inverse(self.sigma_velocity)
        self.weights = blue_weights(self.sigma_velocity)

    @property
    def predicted_variance(self) -> float:
        return float(self.weights @ self.sigma_velocity @ self.weights)

    def estimate(self, wrapped: WrappedVelocities, offset: float = 0.0) -> PromResult:
        return prom_from_wrapped(wrapped, self.sigma_velocity, offset=offset)
