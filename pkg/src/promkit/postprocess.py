"""Spatial post-processing of per-voxel velocity candidate sets.

Per-voxel estimation leaves each voxel a short ranked list of wrapping
candidates.  The post-processor alternates between fitting a locally
weighted quadratic surface through the currently selected values and
re-selecting, per voxel, the candidate that best trades its own misfit
against agreement with the surface.  Selections only ever switch between
existing candidates; candidate values themselves are never modified.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import kernels
from .congruence import EncodingScheme, vencs_from_moments, wrap_to_range
from .covariance import SnrMatrix
from .errors import ValidationError
from .estimator import PromModel

MASK_THRESHOLD = 0.3
DEFAULT_SPAN_SMOOTH = 0.25  # phantom-like smooth fields
DEFAULT_SPAN_DETAILED = 0.03  # structured in-vivo-like fields


@dataclasses.dataclass(frozen=True)
class VelocityField:
    """Per-voxel candidate lists over a 2-D grid, flattened row-major.

    ``cand_v`` holds up to ``top_m`` candidate velocities per voxel inside
    [offset, offset + omega), ranked by their stored ``cand_nll``; unused
    slots are NaN.  ``mask`` is True for voxels excluded from fitting and
    updates.  ``selected`` indexes the active candidate per voxel.
    """

    cand_v: np.ndarray
    cand_nll: np.ndarray
    num_candidates: np.ndarray
    selected: np.ndarray
    magnitude: np.ndarray
    coords: np.ndarray
    mask: np.ndarray
    omega: float
    offset: float
    shape: tuple | None = None

    def __post_init__(self) -> None:
        n = self.cand_v.shape[0]
        if self.cand_v.ndim != 2 or self.cand_nll.shape != self.cand_v.shape:
            raise ValidationError("candidate arrays must share shape (voxels, m)")
        for name in ("num_candidates", "selected", "magnitude", "mask"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have one entry per voxel")
        if self.coords.shape != (n, 2):
            raise ValidationError("coords must be (voxels, 2)")
        if not (self.omega > 0.0):
            raise ValidationError("omega must be positive")
        live = ~self.mask & (self.num_candidates > 0)
        sel = self.selected[live]
        if sel.size and (np.any(sel < 0) or
                         np.any(sel >= self.num_candidates[live])):
            raise ValidationError("selected index out of candidate range")
        if self.shape is not None and int(np.prod(self.shape)) != n:
            raise ValidationError("shape does not match voxel count")

    @property
    def num_voxels(self) -> int:
        return self.cand_v.shape[0]

    def velocities(self) -> np.ndarray:
        """Selected candidate value per voxel; NaN where unavailable."""
        idx = np.clip(self.selected, 0, self.cand_v.shape[1] - 1)
        out = self.cand_v[np.arange(self.num_voxels), idx]
        out = np.where(self.mask | (self.num_candidates == 0), np.nan, out)
        return out

    def velocity_map(self) -> np.ndarray:
        """Selected values reshaped to the grid; requires ``shape``."""
        if self.shape is None:
            raise ValidationError("field carries no grid shape")
        return self.velocities().reshape(self.shape)

    def replace_selected(self, selected: np.ndarray) -> "VelocityField":
        return dataclasses.replace(self, selected=np.asarray(selected, np.int64))


def coil_combined_magnitude(y: np.ndarray) -> np.ndarray:
    """Root-sum-square over coils, averaged over encodings; y is 4-D."""
    return np.sqrt(np.sum(np.abs(y) ** 2, axis=1)).mean(axis=0)


def estimate_velocity_field(y: np.ndarray, scheme: EncodingScheme,
                            snr: SnrMatrix | None = None,
                            offset: float | None = None, top_m: int = 2,
                            mask_threshold: float = MASK_THRESHOLD,
                            noise_sigma: float | None = None) -> VelocityField:
    """Per-voxel candidate search over an image, with magnitude masking.

    ``y`` has shape (encodings, coils, rows, cols).  Voxels whose
    coil-combined magnitude falls below ``mask_threshold`` times the image
    maximum are masked.  With ``snr`` given, its model covariance drives
    the candidate ranking for every voxel; otherwise each voxel uses its
    own magnitude-driven covariance.  The magnitude-driven covariance is
    built without a noise scale, so the stored candidate costs are then
    sigma^2 times the true negative log-likelihoods; pass the measured
    ``noise_sigma`` to restore the likelihood scale that spatial
    regularization balances against.
    """
    y = np.asarray(y, dtype=np.complex128)
    if y.ndim != 4:
        raise ValidationError("expected measurements shaped (Ne, Nc, rows, cols)")
    ne, nc, rows, cols = y.shape
    if scheme.num_encodings != ne:
        raise ValidationError("scheme and measurement encoding counts differ")
    if top_m < 1:
        raise ValidationError("top_m must be at least 1")
    if not 0.0 <= mask_threshold <= 1.0:
        raise ValidationError("mask_threshold must lie in [0, 1]")
    if noise_sigma is not None and not noise_sigma > 0.0:
        raise ValidationError("noise_sigma must be positive")

    vencs = vencs_from_moments(scheme)
    omega = vencs.range()
    if offset is None:
        offset = -0.5 * omega
    mag = coil_combined_magnitude(y)
    mask = (mag < mask_threshold * float(mag.max())).ravel()

    nvox = rows * cols
    flat = np.moveaxis(y.reshape(ne, nc, nvox), 2, 0)  # (nvox, ne, nc)
    iy, ix = np.divmod(np.arange(nvox), cols)
    coords = np.stack([iy, ix], axis=1).astype(np.float64)

    if snr is not None:
        model = PromModel(scheme, snr)
        args = kernels.model_args(model)
        w, pinv = args["w"], args["pinv"]
        use_data_cov = False
    else:
        args = kernels.scheme_args(scheme, vencs)
        d = len(vencs.pairs)
        w, pinv = np.full(d, 1.0 / d), np.eye(d)
        use_data_cov = True

    cand_v = np.full((nvox, top_m), np.nan)
    cand_nll = np.full((nvox, top_m), np.nan)
    num = np.zeros(nvox, np.int64)
    live = ~mask
    if np.any(live):
        h = vencs.wrap_counts()
        cv, cn, _, ncnt = kernels.field_prom(
            np.ascontiguousarray(flat[live]), args["pa"], args["pb"],
            args["venc"], omega, h, w, pinv,
            use_data_cov=use_data_cov, top_m=top_m)
        cand_v[live] = wrap_to_range(cv, omega, offset)
        if noise_sigma is not None and use_data_cov:
            cn = cn / (noise_sigma * noise_sigma)
        cand_nll[live] = cn
        num[live] = ncnt
    return VelocityField(cand_v=cand_v, cand_nll=cand_nll, num_candidates=num,
                         selected=np.zeros(nvox, np.int64),
                         magnitude=mag.ravel(), coords=coords, mask=mask,
                         omega=float(omega), offset=float(offset),
                         shape=(rows, cols))


class _LoessSmoother:
    """Precomputed locally weighted quadratic smoother on fixed points.

    The fitted value at each point is linear in the observed values, so
    the per-point hat rows are computed once and reused across sweeps.
    Points without six usable neighbors, or with a rank-deficient local
    design, get no fit (marked unusable).
    """

    def __init__(self, points: np.ndarray, span: float):
        if not 0.0 < span <= 1.0:
            raise ValidationError("span must lie in (0, 1]")
        n = points.shape[0]
        self.n = n
        q = min(n, int(math.ceil(span * n)))
        self.usable = np.zeros(n, dtype=bool)
        self.neighbors = np.zeros((n, q), np.int64)
        self.hat = np.zeros((n, q))
        if n == 0:
            return
        d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
        order = np.argpartition(d2, q - 1, axis=1)[:, :q] if q < n else \
            np.argsort(d2, axis=1)
        for i in range(n):
            idx = order[i]
            d = np.sqrt(d2[i, idx])
            dmax = d.max()
            if dmax <= 0.0:
                # all neighbors coincide; a constant fit through them
                wts = np.ones(idx.size)
            else:
                wts = (1.0 - (d / dmax) ** 3) ** 3
                wts[wts < 0.0] = 0.0
            if np.count_nonzero(wts > 0.0) < 6:
                continue
            dy = points[idx, 0] - points[i, 0]
            dx = points[idx, 1] - points[i, 1]
            x_mat = np.column_stack([np.ones(idx.size), dy, dx,
                                     dy * dy, dy * dx, dx * dx])
            xtw = x_mat.T * wts
            gram = xtw @ x_mat
            if np.linalg.matrix_rank(gram) < 6:
                continue
            # fitted value at the centre point is the intercept row
            self.hat[i] = np.linalg.solve(gram, xtw)[0]
            self.neighbors[i] = idx
            self.usable[i] = True

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = np.full(self.n, np.nan)
        if self.n and np.any(self.usable):
            u = self.usable
            out[u] = np.einsum("ij,ij->i", self.hat[u], values[self.neighbors[u]])
        return out


def loess_quadratic_fit(field: VelocityField, span: float) -> np.ndarray:
    """Locally weighted quadratic surface through the selected values.

    Each unmasked voxel is fit over its ceil(span * N) nearest unmasked
    voxels with tricube weights on normalized distance; the returned array
    holds the fitted value per voxel, NaN at masked voxels and at voxels
    with too few usable neighbors for a full quadratic.
    """
    live = np.flatnonzero(~field.mask & (field.num_candidates > 0))
    out = np.full(field.num_voxels, np.nan)
    if live.size == 0:
        return out
    smoother = _LoessSmoother(field.coords[live], span)
    out[live] = smoother.apply(field.velocities()[live])
    return out


@dataclasses.dataclass(frozen=True)
class PromPlusResult:
    """Post-processed field plus convergence diagnostics.

    ``iterations`` counts alternating sweeps executed, including the final
    sweep that changed nothing.  ``cost_trace`` holds the total objective
    after each half step (surface fit, then re-selection); only the
    re-selection halves are guaranteed non-increasing.
    """

    field: VelocityField
    iterations: int
    selection_changes: tuple
    cost_trace: tuple


def _total_cost(field: VelocityField, sel: np.ndarray, surface: np.ndarray,
                lam: float) -> float:
    live = np.flatnonzero(~field.mask & (field.num_candidates > 0))
    rows = field.cand_v[live]
    nll = field.cand_nll[live]
    pick = sel[live]
    vsel = rows[np.arange(live.size), pick]
    cost = nll[np.arange(live.size), pick].sum()
    u = surface[live]
    ok = np.isfinite(u)
    dev = vsel[ok] - u[ok]
    return float(cost + lam * np.dot(dev, dev))


def prom_plus(field: VelocityField, span: float = DEFAULT_SPAN_SMOOTH,
              lam: float = 1.0, max_iter: int = 50) -> PromPlusResult:
    """Alternate surface fitting and per-voxel candidate re-selection.

    Each sweep fits the surface through the current selections, then every
    unmasked voxel re-selects the candidate minimizing its stored misfit
    plus ``lam`` times squared deviation from the surface (deviation term
    dropped where the surface is undefined).  Stops when a sweep changes
    no selection or after ``max_iter`` sweeps.  With ``lam`` = 0 the
    selections are the per-voxel ranking and the field returns unchanged.
    """
    if lam < 0.0 or not math.isfinite(lam):
        raise ValidationError("lam must be finite and nonnegative")
    if max_iter < 1:
        raise ValidationError("max_iter must be at least 1")
    live = np.flatnonzero(~field.mask & (field.num_candidates > 0))
    sel = field.selected.copy()
    if live.size == 0:
        return PromPlusResult(field.replace_selected(sel), 0, (), ())

    smoother = _LoessSmoother(field.coords[live], span)
    rows = field.cand_v[live]
    nll = np.where(np.isfinite(field.cand_nll[live]),
                   field.cand_nll[live], np.inf)
    changes_log = []
    cost_trace = []
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        vsel = rows[np.arange(live.size), sel[live]]
        u = smoother.apply(vsel)
        cost_trace.append(_total_cost(field, sel, _expand(u, live, field), lam))
        dev = rows - u[:, None]
        penal = np.where(np.isfinite(dev), dev * dev, 0.0)
        score = nll + lam * np.where(np.isfinite(u[:, None]), penal, 0.0)
        new_pick = np.argmin(score, axis=1)
        changed = int(np.count_nonzero(new_pick != sel[live]))
        sel[live] = new_pick
        cost_trace.append(_total_cost(field, sel, _expand(u, live, field), lam))
        changes_log.append(changed)
        if changed == 0:
            break
    return PromPlusResult(field.replace_selected(sel), iterations,
                          tuple(changes_log), tuple(cost_trace))


def _expand(u_live: np.ndarray, live: np.ndarray,
            field: VelocityField) -> np.ndarray:
    full = np.full(field.num_voxels, np.nan)
    full[live] = u_live
    return full
