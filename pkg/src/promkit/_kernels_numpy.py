"""Pure-numpy fallback implementations of the hot kernels.

Signature-compatible with _kernels_numba (see that module's docstring for
the shared conventions).  Vectorized across trials in fixed-size chunks;
random streams are bit-identical to the numba backend by construction.
"""

from __future__ import annotations

import math

import numpy as np

from ._rng import complex_noise, trial_bases

_CHUNK = 4096
_RANK_REL_CUTOFF = 1e-10


def jacobi_eigh(mat):
    """Eigenvalues (ascending) and eigenvectors of a symmetric matrix."""
    return np.linalg.eigh(np.asarray(mat, dtype=np.float64))


def _simulate_chunk(seed, lo, count, v, gm1, s):
    ne, nc = s.shape
    bases = trial_bases(int(seed), lo, count)
    y = np.empty((count, ne, nc), np.complex128)
    carrier = np.exp(1j * gm1 * v)
    for a in range(ne):
        for b in range(nc):
            y[:, a, b] = s[a, b] * carrier[a] + complex_noise(bases, 2 * (a * nc + b))
    return y


def simulate_batch(seed, trial0, trials, v, gm1, s):
    """Simulated measurements for trials [trial0, trial0 + trials)."""
    ne, nc = s.shape
    out = np.empty((trials, ne, nc), np.complex128)
    for lo in range(0, trials, _CHUNK):
        n = min(_CHUNK, trials - lo)
        out[lo:lo + n] = _simulate_chunk(seed, trial0 + lo, n, v, gm1, s)
    return out


def _wrapped_batch(y, pa, pb, venc):
    """Wrapped pair velocities: vt (n, D) in [0, 2 venc),|r| (n, D), valid (n,)."""
    r = np.einsum("tac,tbc->tab", y, np.conj(y))[:, pa, pb]
    # fancy-index pairs: r[t, i] = sum_c y[t, pa_i, c] conj(y[t, pb_i, c])
    ok = np.all(r != 0, axis=1)
    theta = np.angle(r) % (2.0 * np.pi)
    theta[theta >= 2.0 * np.pi] = 0.0
    vt = theta / np.pi * venc
    vt[vt >= 2.0 * venc] = 0.0
    return vt, np.abs(r), ok


def _prom_batch(vt, venc, omega, h, w, pinv):
    """Vectorized candidate search; returns (v_hat (n,), k_best (n, D)).

    ``w``/``pinv`` may be (D,)/(D, D) shared or (n, D)/(n, D, D) per trial.
    One representative per arc of the wrap map, duplicates included (they
    score identically, so the argmin is unaffected).
    """
    n, d = vt.shape
    cols = []
    for i in range(d):
        j = np.arange(int(h[i]), dtype=np.float64)
        cols.append(np.mod(vt[:, i:i + 1] + (2.0 * j + 1.0) * venc[i], omega))
    bps = np.sort(np.concatenate(cols, axis=1), axis=1)
    mids = 0.5 * (bps[:, 1:] + bps[:, :-1])
    closing = np.mod(0.5 * (bps[:, -1] + bps[:, 0] + omega), omega)
    reps = np.concatenate([mids, closing[:, None]], axis=1)
    k = np.ceil(-0.5 - (vt[:, None, :] - reps[:, :, None]) / (2.0 * venc)).astype(np.int64)
    shifted = vt[:, None, :] + 2.0 * k * venc
    if w.ndim == 1:
        v_base = shifted @ w
    else:
        v_base = np.einsum("tbi,ti->tb", shifted, w)
    v_base = np.mod(v_base, omega)
    v_base[v_base >= omega] -= omega
    v_base[v_base < 0.0] += omega
    diff = vt[:, None, :] - v_base[:, :, None]
    dres = diff - np.rint(diff / (2.0 * venc)) * (2.0 * venc)
    if pinv.ndim == 2:
        nll = 0.5 * np.einsum("tbi,ij,tbj->tb", dres, pinv, dres)
    else:
        nll = 0.5 * np.einsum("tbi,tij,tbj->tb", dres, pinv, dres)
    ibest = np.argmin(nll, axis=1)
    rows = np.arange(n)
    return v_base[rows, ibest], k[rows, ibest]


def _data_weights_batch(y, pa, pb, venc):
    """Per-trial magnitude-driven velocity covariance -> (w, pinv) batches."""
    mags = np.abs(y)
    first = np.sum(mags**2, axis=2)              # (n, ne)
    n = y.shape[0]
    nc = y.shape[2]
    d = len(pa)
    cov = np.zeros((n, d, d))
    for i in range(d):
        cross = np.sum(mags[:, pa[i], :] * mags[:, pb[i], :], axis=1)
        cross = np.where(cross > 0.0, cross, np.inf)  # masked rows -> zero row
        cov[:, i, i] = (first[:, pa[i]] + first[:, pb[i]]) / (2.0 * cross**2)
    for i in range(d):
        for j in range(i + 1, d):
            if pa[i] == pa[j] or pa[i] == pb[j]:
                e = pa[i]
            elif pb[i] == pa[j] or pb[i] == pb[j]:
                e = pb[i]
            else:
                continue
            same_role = (e == pa[i] and e == pa[j]) or (e == pb[i] and e == pb[j])
            denom = np.where(first[:, e] > 0.0, first[:, e], np.inf)
            val = nc / (2.0 * denom)
            if not same_role:
                val = -val
            cov[:, i, j] = val
            cov[:, j, i] = val
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    cov = np.einsum("tik,tk,tjk->tij", vecs, vals, vecs)
    cov *= np.outer(venc, venc) / (np.pi * np.pi)
    vals, vecs = np.linalg.eigh(cov)
    top = vals[:, -1]
    good = top > 0.0
    cut = np.where(good, _RANK_REL_CUTOFF * top, np.inf)
    inv = np.where(vals > cut[:, None], 1.0 / np.where(vals > 0, vals, 1.0), 0.0)
    pinv = np.einsum("tik,tk,tjk->tij", vecs, inv, vecs)
    raw = np.sum(pinv, axis=2)
    denom = np.sum(raw, axis=1)
    ok = denom > 0.0
    w = np.where(ok[:, None], raw / np.where(ok, denom, 1.0)[:, None], 1.0 / d)
    pinv[~ok] = 0.0
    return w, pinv


def mc_unwrap_error_count(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                          omega, h, w, pinv):
    """Number of trials whose winning wrap counts differ from the truth."""
    errors = 0
    for lo in range(0, trials, _CHUNK):
        n = min(_CHUNK, trials - lo)
        y = _simulate_chunk(seed, trial0 + lo, n, v, gm1, s)
        vt, _, _ = _wrapped_batch(y, pa, pb, venc)
        _, k_best = _prom_batch(vt, venc, omega, h, w, pinv)
        ktrue = np.rint((vt - v) / (2.0 * venc)).astype(np.int64)
        labels = np.mod(k_best + ktrue, h)
        errors += int(np.count_nonzero(np.any(labels != 0, axis=1)))
    return errors


def mc_tube_labels(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                   omega, h, w, pinv):
    """Per-trial wrap-error labels (k_win - k_true) mod h, shape (trials, D)."""
    out = np.empty((trials, len(pa)), np.int64)
    for lo in range(0, trials, _CHUNK):
        n = min(_CHUNK, trials - lo)
        y = _simulate_chunk(seed, trial0 + lo, n, v, gm1, s)
        vt, _, _ = _wrapped_batch(y, pa, pb, venc)
        _, k_best = _prom_batch(vt, venc, omega, h, w, pinv)
        ktrue = np.rint((vt - v) / (2.0 * venc)).astype(np.int64)
        out[lo:lo + n] = np.mod(k_best + ktrue, h)
    return out


def mc_prom_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                 omega, h, w, pinv, use_data_cov):
    """Per-trial estimates in [0, omega); data-driven covariance optional."""
    out = np.empty(trials, np.float64)
    for lo in range(0, trials, _CHUNK):
        n = min(_CHUNK, trials - lo)
        y = _simulate_chunk(seed, trial0 + lo, n, v, gm1, s)
        vt, _, _ = _wrapped_batch(y, pa, pb, venc)
        if use_data_cov:
            wb, pb_inv = _data_weights_batch(y, pa, pb, venc)
            out[lo:lo + n] = _prom_batch(vt, venc, omega, h, wb, pb_inv)[0]
        else:
            out[lo:lo + n] = _prom_batch(vt, venc, omega, h, w, pinv)[0]
    return out


def mc_grid_agreement(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                      omega, h, w, pinv, grid_n):
    """Trials where the candidate search lands within one grid step of a
    brute-force scan of the same cost."""
    step = omega / grid_n
    grid = np.arange(grid_n, dtype=np.float64) * step
    hits = 0
    # one trial at a time: the scan needs a (grid_n, D) residual block
    for lo in range(0, trials, _CHUNK):
        n = min(_CHUNK, trials - lo)
        y = _simulate_chunk(seed, trial0 + lo, n, v, gm1, s)
        vt, _, ok = _wrapped_batch(y, pa, pb, venc)
        vhat, _ = _prom_batch(vt, venc, omega, h, w, pinv)
        for t in range(n):
            if not ok[t]:
                continue
            diff = vt[t] - grid[:, None]
            dres = diff - np.rint(diff / (2.0 * venc)) * (2.0 * venc)
            nll = np.einsum("gi,ij,gj->g", dres, pinv, dres)
            gv = grid[int(np.argmin(nll))]
            delta = vhat[t] - gv
            delta -= np.rint(delta / omega) * omega
            if abs(delta) <= step * (1.0 + 1e-9):
                hits += 1
    return hits


def _sdv_corrected_vec(vt21, vt31, venc21, venc31):
    c21 = np.where(vt21 < venc21, vt21, vt21 - 2.0 * venc21)
    c31 = np.where(vt31 < venc31, vt31, vt31 - 2.0 * venc31)
    mshift = np.rint((c21 - c31) / (2.0 * venc31))
    mmax = float(math.floor(venc21 / venc31))
    mshift = np.clip(mshift, -mmax, mmax)
    return c31 + 2.0 * mshift * venc31


def mc_sdv_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc):
    """Per-trial dual-venc estimates (pairs 21 and 31 only)."""
    out = np.empty(trials, np.float64)
    for lo in range(0, trials, _CHUNK):
        n = min(_CHUNK, trials - lo)
        y = _simulate_chunk(seed, trial0 + lo, n, v, gm1, s)
        vt, _, _ = _wrapped_batch(y, pa, pb, venc)
        out[lo:lo + n] = _sdv_corrected_vec(vt[:, 0], vt[:, 1], venc[0], venc[1])
    return out


def _grid2_chunk(vt, rmag, venc, grid_start, grid_step, grid_count, weighted):
    n = vt.shape[0]
    if weighted:
        w31 = rmag[:, 1] ** 2
        w32 = rmag[:, 2] ** 2
    else:
        w31 = np.ones(n)
        w32 = np.ones(n)
    z31 = np.exp(1j * (np.pi * grid_start / venc[1] - np.pi * vt[:, 1] / venc[1]))
    z32 = np.exp(1j * (np.pi * grid_start / venc[2] - np.pi * vt[:, 2] / venc[2]))
    rot31 = np.exp(1j * np.pi * grid_step / venc[1])
    rot32 = np.exp(1j * np.pi * grid_step / venc[2])
    best = np.full(n, np.inf)
    ibest = np.zeros(n, np.int64)
    for i in range(grid_count):
        cost = w31 * (1.0 - z31.real) + w32 * (1.0 - z32.real)
        better = cost < best
        best[better] = cost[better]
        ibest[better] = i
        z31 *= rot31
        z32 *= rot32
    return grid_start + ibest * grid_step


def mc_grid2_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                  grid_start, grid_step, grid_count, weighted):
    """Grid minimizer of the two-pair phasor misfit (pairs 31 and 32)."""
    out = np.empty(trials, np.float64)
    for lo in range(0, trials, _CHUNK):
        n = min(_CHUNK, trials - lo)
        y = _simulate_chunk(seed, trial0 + lo, n, v, gm1, s)
        vt, rmag, _ = _wrapped_batch(y, pa, pb, venc)
        out[lo:lo + n] = _grid2_chunk(vt, rmag, venc, grid_start, grid_step,
                                      grid_count, weighted)
    return out


def _mle_chunk(y, gm1, grid_start, grid_step, grid_count):
    """Single-coil nonnegative-amplitude likelihood grid search, one chunk.

    See the numba twin for the support-enumeration argument; here each
    support's closed-form eigenpair test is vectorized across trials.
    """
    n, ne = y.shape
    u = y * np.exp(-1j * gm1 * grid_start)
    rot = np.exp(-1j * gm1 * grid_step)
    best_lam = np.full(n, -1.0)
    ibest = np.zeros(n, np.int64)
    masks = [[a for a in range(ne) if (m >> a) & 1] for m in range(1, (1 << ne))]
    for i in range(grid_count):
        usq = u * u
        uabs2 = (u.real**2 + u.imag**2)
        lam_v = np.zeros(n)
        for sup in masks:
            q = usq[:, sup].sum(axis=1)
            csum = uabs2[:, sup].sum(axis=1)
            qabs = np.abs(q)
            lam1 = 0.5 * (csum + qabs)
            safe = np.where(qabs > 0.0, qabs, 1.0)
            ratio = np.where(qabs > 0.0, q.real / safe, 1.0)
            ratio = np.clip(ratio, -1.0, 1.0)
            cpsi = np.sqrt(0.5 * (1.0 + ratio))
            spsi = np.sqrt(0.5 * (1.0 - ratio)) * np.where(q.imag < 0.0, -1.0, 1.0)
            x = u[:, sup].real * cpsi[:, None] + u[:, sup].imag * spsi[:, None]
            feas1 = np.all(x >= 0.0, axis=1) | np.all(x <= 0.0, axis=1)
            x2 = -u[:, sup].real * spsi[:, None] + u[:, sup].imag * cpsi[:, None]
            feas2 = np.all(x2 >= 0.0, axis=1) | np.all(x2 <= 0.0, axis=1)
            lam2 = 0.5 * (csum - qabs)
            cand = np.where(feas1, lam1, np.where(feas2, lam2, -np.inf))
            lam_v = np.maximum(lam_v, cand)
        better = lam_v > best_lam
        best_lam[better] = lam_v[better]
        ibest[better] = i
        u *= rot
    return grid_start + ibest * grid_step


def mc_mle_vhat(seed, trial0, trials, v, gm1, s, grid_start, grid_step,
                grid_count):
    """Grid maximizer of the single-coil nonnegative-amplitude likelihood."""
    out = np.empty(trials, np.float64)
    for lo in range(0, trials, _CHUNK):
        n = min(_CHUNK, trials - lo)
        y = _simulate_chunk(seed, trial0 + lo, n, v, gm1, s)
        out[lo:lo + n] = _mle_chunk(y[:, :, 0], gm1, grid_start, grid_step,
                                    grid_count)
    return out


def field_prom(y, pa, pb, venc, omega, h, w, pinv, use_data_cov, top_m):
    """Voxelwise candidate search over a flattened field y (V, Ne, Nc)."""
    nvox = y.shape[0]
    d = len(pa)
    cand_v = np.full((nvox, top_m), np.nan)
    cand_nll = np.full((nvox, top_m), np.nan)
    cand_k = np.zeros((nvox, top_m, d), np.int64)
    n_cand = np.zeros(nvox, np.int64)
    for lo in range(0, nvox, _CHUNK):
        n = min(_CHUNK, nvox - lo)
        yc = np.ascontiguousarray(y[lo:lo + n])
        vt, _, ok = _wrapped_batch(yc, pa, pb, venc)
        if use_data_cov:
            wb, pinvb = _data_weights_batch(yc, pa, pb, venc)
        # per-voxel enumeration with dedupe and (nll, lex k) ordering
        for t in range(n):
            if not ok[t]:
                continue
            wv = wb[t] if use_data_cov else w
            pv = pinvb[t] if use_data_cov else pinv
            bps = []
            for i in range(d):
                j = np.arange(int(h[i]), dtype=np.float64)
                bps.append(np.mod(vt[t, i] + (2.0 * j + 1.0) * venc[i], omega))
            bps = np.sort(np.concatenate(bps))
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
            k = np.ceil(-0.5 - (vt[t][None, :] - reps[:, None]) / (2.0 * venc))
            k = np.unique(k.astype(np.int64), axis=0)
            v_base = np.mod((vt[t] + 2.0 * k * venc) @ wv, omega)
            v_base[v_base >= omega] -= omega
            v_base[v_base < 0.0] += omega
            diff = vt[t][None, :] - v_base[:, None]
            dres = diff - np.rint(diff / (2.0 * venc)) * (2.0 * venc)
            nll = 0.5 * np.einsum("bi,ij,bj->b", dres, pv, dres)
            order = sorted(range(k.shape[0]),
                           key=lambda r: (nll[r], tuple(k[r])))
            nkeep = min(top_m, len(order))
            n_cand[lo + t] = nkeep
            for slot in range(nkeep):
                r = order[slot]
                cand_v[lo + t, slot] = v_base[r]
                cand_nll[lo + t, slot] = nll[r]
                cand_k[lo + t, slot] = k[r]
    return cand_v, cand_nll, cand_k, n_cand


def field_sdv(y, pa, pb, venc):
    """Voxelwise dual-venc estimates; NaN for all-zero voxels."""
    nvox = y.shape[0]
    out = np.full(nvox, np.nan)
    for lo in range(0, nvox, _CHUNK):
        n = min(_CHUNK, nvox - lo)
        vt, _, ok = _wrapped_batch(np.ascontiguousarray(y[lo:lo + n]), pa, pb, venc)
        vals = _sdv_corrected_vec(vt[:, 0], vt[:, 1], venc[0], venc[1])
        out[lo:lo + n] = np.where(ok, vals, np.nan)
    return out


def field_grid2(y, pa, pb, venc, grid_start, grid_step, grid_count, weighted):
    """Voxelwise two-pair phasor grid search; NaN for all-zero voxels."""
    nvox = y.shape[0]
    out = np.full(nvox, np.nan)
    for lo in range(0, nvox, _CHUNK):
        n = min(_CHUNK, nvox - lo)
        vt, rmag, ok = _wrapped_batch(np.ascontiguousarray(y[lo:lo + n]), pa, pb, venc)
        vals = _grid2_chunk(vt, rmag, venc, grid_start, grid_step, grid_count,
                            weighted)
        out[lo:lo + n] = np.where(ok, vals, np.nan)
    return out
