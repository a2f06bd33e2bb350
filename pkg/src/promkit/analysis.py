"""Error analysis: wrap-error mixture, tube labels, and the velocity CRLB."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels_numpy, kernels
from ._rng import complex_noise, trial_bases
from .congruence import (EncodingScheme, VencSet, WrappedVelocities,
                         symmetric_moments_from_vencs, wrap_to_range)
from .covariance import SnrMatrix
from .errors import NonIdentifiableError, ValidationError
from .estimator import PromModel

__all__ = [
    "MixtureComponent",
    "tube_label",
    "estimate_distribution",
    "unwrap_error_prob",
    "crlb_velocity",
]


@dataclass(frozen=True)
class MixtureComponent:
    """One lobe of the estimate's conditional distribution.

    label is the wrap-error class (selected minus true wrap counts, mod h);
    all components share the same variance, the combined phase-noise
    variance of the estimator.
    """

    label: tuple[int, ...]
    weight: float
    center: float
    variance: float


def _gaussian_noise(trials: int, cov: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic draws from N(0, cov), shape (trials, D)."""
    dim = cov.shape[0]
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    bases = trial_bases(seed, 0, trials)
    cols = []
    for j in range((dim + 1) // 2):
        z = complex_noise(bases, j)
        cols.append(z.real)
        cols.append(z.imag)
    normals = math.sqrt(2.0) * np.stack(cols[:dim], axis=1)
    return normals @ factor.T


def _raw_labels(v: float, noise: np.ndarray, model: PromModel) -> np.ndarray:
    """Selected minus true wrap counts for noise rows, shape (trials, D)."""
    venc = model.vencs.venc
    period = 2.0 * venc
    vt = np.mod(v + noise, period)
    vt = np.where(vt >= period, vt - period, vt)
    vt = np.where(vt < 0.0, 0.0, vt)
    k_true = np.rint((v + noise - vt) / period).astype(np.int64)
    _, k_best = _kernels_numpy._prom_batch(
        vt, venc, model.omega, model.wrap_counts, model.weights,
        model.sigma_pinv)
    return k_best - k_true


def tube_label(noise, v: float, model: PromModel) -> np.ndarray:
    """Wrap-error class of one velocity-domain noise vector at truth v.

    The label is invariant to adding a common shift to every component of
    the noise (the decision regions are tubes along the all-ones direction).
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != model.vencs.venc.shape:
        raise ValidationError("noise must have one entry per encoding pair")
    raw = _raw_labels(float(v), noise[None, :], model)[0]
    return np.mod(raw, model.wrap_counts)


def estimate_distribution(v: float, snr: SnrMatrix, scheme: EncodingScheme,
                          trials: int, top_m: int = 5, seed: int = 0,
                          offset: float | None = None,
                          ) -> list[MixtureComponent]:
    """Monte Carlo mixture of the estimator's conditional distribution.

    Draws phase noise from the model covariance, counts wrap-error labels,
    and places each component at the combined velocity its label implies,
    wrapped into [offset, offset + Omega).  Component weights do not depend
    on v; centers shift with it.  Labels are the raw selected-minus-true
    wrap counts, reduced by whole multiples of the wrap-count vector so the
    implied shift falls in [-Omega/2, Omega/2); reducing each entry mod h
    instead would merge classes whose shifts differ by non-multiples of
    Omega and misplace their centers.
    """
    if trials < 1:
        raise ValidationError("trials must be positive")
    model = PromModel(scheme, snr)
    if offset is None:
        offset = -0.5 * model.omega
    noise = _gaussian_noise(trials, model.sigma_velocity, seed)
    raw = _raw_labels(float(v), noise, model)
    step = (2.0 * raw * model.vencs.venc) @ model.weights
    lobes = np.floor(step / model.omega + 0.5).astype(np.int64)
    raw = raw - lobes[:, None] * model.wrap_counts
    rows, counts = np.unique(raw, axis=0, return_counts=True)
    order = np.argsort(-counts, kind="stable")
    variance = model.predicted_variance
    components = []
    for idx in order[:top_m]:
        x = rows[idx]
        shift = float(model.weights @ (2.0 * x * model.vencs.venc))
        components.append(MixtureComponent(
            label=tuple(int(i) for i in x),
            weight=float(counts[idx]) / trials,
            center=wrap_to_range(float(v) + shift, model.omega, offset),
            variance=variance,
        ))
    return components


def _model_for(vencs_or_scheme) -> EncodingScheme:
    if isinstance(vencs_or_scheme, EncodingScheme):
        return vencs_or_scheme
    if isinstance(vencs_or_scheme, VencSet):
        if vencs_or_scheme.venc.size != 3:
            raise ValidationError(
                "venc-only input needs the three-point geometry; "
                "pass an EncodingScheme otherwise")
        return symmetric_moments_from_vencs(float(vencs_or_scheme.venc[1]),
                                            float(vencs_or_scheme.venc[2]))
    raise ValidationError("expected a VencSet or EncodingScheme")


def unwrap_error_prob(snr: SnrMatrix, vencs, trials: int, seed: int = 0) -> float:
    """Frequency of any nonzero wrap-error label at zero velocity.

    Simulates complex data at v = 0 and scores with the model covariance;
    by shift invariance of the decision regions the zero-velocity frequency
    applies at every velocity, and rescaling all vencs leaves it unchanged.
    """
    if trials < 1:
        raise ValidationError("trials must be positive")
    scheme = _model_for(vencs)
    model = PromModel(scheme, snr)
    count = kernels.mc_unwrap_error_count(seed, 0, trials, 0.0,
                                          **kernels.model_args(model))
    return count / trials


def _stacked_model(v: float, phi0: float, amplitudes: np.ndarray,
                   sensitivities: np.ndarray, scheme: EncodingScheme,
                   ) -> np.ndarray:
    """Noiseless measurement vector, encodings varying fastest within coils."""
    phase = np.exp(1j * (phi0 + scheme.gamma_m1 * v))
    return ((amplitudes * phase)[:, None] * sensitivities[None, :]).ravel()


def _model_jacobian(v: float, phi0: float, amplitudes: np.ndarray,
                    sensitivities: np.ndarray, scheme: EncodingScheme,
                    ) -> np.ndarray:
    """Complex Jacobian for parameters [v, phi0, A_1..A_Ne, Re/Im S_2..S_Nc].

    The first sensitivity is held fixed, removing the common phase and the
    amplitude-scale gauge freedoms of the bilinear parameterization.
    """
    ne = scheme.num_encodings
    nc = sensitivities.size
    phase = np.exp(1j * (phi0 + scheme.gamma_m1 * v))
    mu = (amplitudes * phase)[:, None] * sensitivities[None, :]
    cols = [
        (1j * scheme.gamma_m1)[:, None] * mu,
        1j * mu,
    ]
    for alpha in range(ne):
        col = np.zeros((ne, nc), dtype=np.complex128)
        col[alpha, :] = phase[alpha] * sensitivities
        cols.append(col)
    for beta in range(1, nc):
        col = np.zeros((ne, nc), dtype=np.complex128)
        col[:, beta] = amplitudes * phase
        cols.append(col)
        cols.append(1j * col)
    return np.stack([c.ravel() for c in cols], axis=1)


def crlb_velocity(v: float, phi0: float, amplitudes, sensitivities,
                  sigma: float, scheme: EncodingScheme) -> float:
    """Cramer-Rao variance bound (cm/s)^2 on the velocity.

    Models the voxel as bilinear amplitude-sensitivity factors with total
    complex noise variance sigma^2 per measurement; nuisance parameters are
    the global phase, per-encoding amplitudes, and all but the first coil
    sensitivity.
    """
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    sensitivities = np.asarray(sensitivities, dtype=np.complex128)
    if sensitivities.ndim == 0:
        sensitivities = sensitivities[None]
    if amplitudes.shape != (scheme.num_encodings,) or sensitivities.ndim != 1:
        raise ValidationError("amplitudes must be (Ne,), sensitivities (Nc,)")
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    jac = _model_jacobian(float(v), float(phi0), amplitudes, sensitivities,
                          scheme)
    fim = (2.0 / sigma ** 2) * (jac.conj().T @ jac).real
    vals = np.linalg.eigvalsh(fim)
    if vals[0] <= vals[-1] * 1e-12 or vals[-1] <= 0.0:
        raise NonIdentifiableError("singular Fisher information")
    unit = np.zeros(fim.shape[0])
    unit[0] = 1.0
    return float(unit @ np.linalg.solve(fim, unit))
