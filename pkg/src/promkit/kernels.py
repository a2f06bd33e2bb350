"""Backend-dispatched kernel facade.

Thin wrappers around the numba or numpy kernel twins (selected by
PROMKIT_BACKEND, see _backend): coerce dtypes, unpack model objects, and
keep the call sites backend-agnostic.  All Monte Carlo entry points share
the counter-based RNG contract from _rng, so a (seed, trial index) pair
names one measurement realization regardless of backend, chunking, or
thread count.
"""

from __future__ import annotations

import numpy as np

from . import _backend
from .errors import ValidationError

BACKEND = _backend.ACTIVE_BACKEND

if BACKEND == "numba":
    from . import _kernels_numba as _impl
else:
    from . import _kernels_numpy as _impl

__all__ = [
    "BACKEND",
    "model_args",
    "scheme_args",
    "simulate_batch",
    "mc_unwrap_error_count",
    "mc_tube_labels",
    "mc_prom_vhat",
    "mc_grid_agreement",
    "mc_sdv_vhat",
    "mc_grid2_vhat",
    "mc_mle_vhat",
    "field_prom",
    "field_sdv",
    "field_grid2",
    "jacobi_eigh",
]


def _pairs_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    pa = np.array([a - 1 for a, _ in pairs], dtype=np.int64)
    pb = np.array([b - 1 for _, b in pairs], dtype=np.int64)
    return pa, pb


def model_args(model) -> dict:
    """Low-level argument bundle for a PromModel."""
    pa, pb = _pairs_arrays(model.vencs.pairs)
    return {
        "gm1": np.ascontiguousarray(model.scheme.gamma_m1, dtype=np.float64),
        "s": np.ascontiguousarray(model.snr.s, dtype=np.float64),
        "pa": pa,
        "pb": pb,
        "venc": np.ascontiguousarray(model.vencs.venc, dtype=np.float64),
        "omega": float(model.omega),
        "h": np.ascontiguousarray(model.wrap_counts, dtype=np.int64),
        "w": np.ascontiguousarray(model.weights, dtype=np.float64),
        "pinv": np.ascontiguousarray(model.sigma_pinv, dtype=np.float64),
    }


def scheme_args(scheme, vencs) -> dict:
    """Pair/venc arrays for a scheme, without covariance context."""
    pa, pb = _pairs_arrays(vencs.pairs)
    return {
        "gm1": np.ascontiguousarray(scheme.gamma_m1, dtype=np.float64),
        "pa": pa,
        "pb": pb,
        "venc": np.ascontiguousarray(vencs.venc, dtype=np.float64),
    }


def _seed_u64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & ((1 << 64) - 1))


def simulate_batch(seed, trial0, trials, v, gm1, s):
    return _impl.simulate_batch(_seed_u64(seed), int(trial0), int(trials),
                                float(v), np.asarray(gm1, np.float64),
                                np.asarray(s, np.float64))


def mc_unwrap_error_count(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                          omega, h, w, pinv) -> int:
    return int(_impl.mc_unwrap_error_count(
        _seed_u64(seed), int(trial0), int(trials), float(v),
        np.asarray(gm1, np.float64), np.asarray(s, np.float64),
        np.asarray(pa, np.int64), np.asarray(pb, np.int64),
        np.asarray(venc, np.float64), float(omega), np.asarray(h, np.int64),
        np.asarray(w, np.float64), np.asarray(pinv, np.float64)))


def mc_tube_labels(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                   omega, h, w, pinv) -> np.ndarray:
    return _impl.mc_tube_labels(
        _seed_u64(seed), int(trial0), int(trials), float(v),
        np.asarray(gm1, np.float64), np.asarray(s, np.float64),
        np.asarray(pa, np.int64), np.asarray(pb, np.int64),
        np.asarray(venc, np.float64), float(omega), np.asarray(h, np.int64),
        np.asarray(w, np.float64), np.asarray(pinv, np.float64))


def mc_prom_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                 omega, h, w, pinv, use_data_cov=False) -> np.ndarray:
    return _impl.mc_prom_vhat(
        _seed_u64(seed), int(trial0), int(trials), float(v),
        np.asarray(gm1, np.float64), np.asarray(s, np.float64),
        np.asarray(pa, np.int64), np.asarray(pb, np.int64),
        np.asarray(venc, np.float64), float(omega), np.asarray(h, np.int64),
        np.asarray(w, np.float64), np.asarray(pinv, np.float64),
        bool(use_data_cov))


def mc_grid_agreement(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                      omega, h, w, pinv, grid_n) -> int:
    return int(_impl.mc_grid_agreement(
        _seed_u64(seed), int(trial0), int(trials), float(v),
        np.asarray(gm1, np.float64), np.asarray(s, np.float64),
        np.asarray(pa, np.int64), np.asarray(pb, np.int64),
        np.asarray(venc, np.float64), float(omega), np.asarray(h, np.int64),
        np.asarray(w, np.float64), np.asarray(pinv, np.float64),
        int(grid_n)))


def mc_sdv_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc) -> np.ndarray:
    return _impl.mc_sdv_vhat(
        _seed_u64(seed), int(trial0), int(trials), float(v),
        np.asarray(gm1, np.float64), np.asarray(s, np.float64),
        np.asarray(pa, np.int64), np.asarray(pb, np.int64),
        np.asarray(venc, np.float64))


def mc_grid2_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                  grid_start, grid_step, grid_count, weighted) -> np.ndarray:
    return _impl.mc_grid2_vhat(
        _seed_u64(seed), int(trial0), int(trials), float(v),
        np.asarray(gm1, np.float64), np.asarray(s, np.float64),
        np.asarray(pa, np.int64), np.asarray(pb, np.int64),
        np.asarray(venc, np.float64), float(grid_start), float(grid_step),
        int(grid_count), bool(weighted))


def mc_mle_vhat(seed, trial0, trials, v, gm1, s, grid_start, grid_step,
                grid_count) -> np.ndarray:
    s = np.asarray(s, np.float64)
    if s.ndim != 2 or s.shape[1] != 1:
        raise ValidationError(
            "the likelihood grid kernel handles a single coil; "
            "use complex_mle_grid for multi-coil voxels")
    return _impl.mc_mle_vhat(
        _seed_u64(seed), int(trial0), int(trials), float(v),
        np.asarray(gm1, np.float64), s, float(grid_start), float(grid_step),
        int(grid_count))


def field_prom(y, pa, pb, venc, omega, h, w, pinv, use_data_cov=True,
               top_m=2):
    y = np.ascontiguousarray(y, dtype=np.complex128)
    if y.ndim != 3:
        raise ValidationError("field y must have shape (V, Ne, Nc)")
    return _impl.field_prom(
        y, np.asarray(pa, np.int64), np.asarray(pb, np.int64),
        np.asarray(venc, np.float64), float(omega), np.asarray(h, np.int64),
        np.asarray(w, np.float64), np.asarray(pinv, np.float64),
        bool(use_data_cov), int(top_m))


def field_sdv(y, pa, pb, venc) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.complex128)
    if y.ndim != 3:
        raise ValidationError("field y must have shape (V, Ne, Nc)")
    return _impl.field_sdv(y, np.asarray(pa, np.int64),
                           np.asarray(pb, np.int64),
                           np.asarray(venc, np.float64))


def field_grid2(y, pa, pb, venc, grid_start, grid_step, grid_count,
                weighted=False) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.complex128)
    if y.ndim != 3:
        raise ValidationError("field y must have shape (V, Ne, Nc)")
    return _impl.field_grid2(
        y, np.asarray(pa, np.int64), np.asarray(pb, np.int64),
        np.asarray(venc, np.float64), float(grid_start), float(grid_step),
        int(grid_count), bool(weighted))


def jacobi_eigh(mat):
    """Symmetric eigendecomposition from the active backend."""
    return _impl.jacobi_eigh(np.ascontiguousarray(mat, dtype=np.float64))
