"""Numba implementations of the hot Monte Carlo and field-estimation loops.

Every routine here has a matching pure-numpy twin in _kernels_numpy; the
facade in kernels.py picks one at import time.  Random draws are counter
based (see _rng), so results are bit-identical regardless of chunking or
thread count.

Conventions shared by both backends:

* pa/pb: 0-based encoding indices of each canonical pair, int64, length D
* venc (D,), omega, wrap counts h (D,) int64
* w, pinv: BLUE weights and covariance pseudo-inverse for the model path
* s: per-measurement SNR magnitudes, shape (Ne, Nc); the simulated signal is
  s[a, b] * exp(i * gamma_m1[a] * v) plus unit-total-variance complex noise
  (reference phase and coil phases cancel in the conjugate pair products and
  are omitted)
* Monte Carlo estimates are returned in the window [0, omega) for the joint
  estimators, [-venc21 - ..., ...] for SDV, and the grid window for the grid
  searches; error metrics are applied by the caller.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_STRIDE = np.uint64(0xD1342543DE82EF95)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV_2_53 = 2.0 ** -53
_TWO_PI = 2.0 * math.pi

_CHUNK = 2048
_RANK_REL_CUTOFF = 1e-10


# ---------------------------------------------------------------- RNG core

@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _trial_base(seed, t):
    return _mix64(seed ^ _mix64((np.uint64(t) + _ONE) * _STRIDE))


@njit(cache=True, inline="always")
def _unit(base, j):
    bits = _mix64(base + (np.uint64(j) + _ONE) * _GOLD)
    return (np.float64(bits >> _S11) + 0.5) * _INV_2_53


@njit(cache=True, inline="always")
def _fill_trial(y, base, s, cosph, sinph):
    ne = s.shape[0]
    nc = s.shape[1]
    j = 0
    for a in range(ne):
        ca = cosph[a]
        sa = sinph[a]
        for b in range(nc):
            u1 = _unit(base, j)
            u2 = _unit(base, j + 1)
            j += 2
            r = math.sqrt(-math.log(u1))
            ang = _TWO_PI * u2
            y[a, b] = complex(s[a, b] * ca + r * math.cos(ang),
                              s[a, b] * sa + r * math.sin(ang))


# ------------------------------------------------- wrapped pair velocities

@njit(cache=True, inline="always")
def _wrapped_pairs(y, pa, pb, venc, vt, rmag):
    """Conjugate pair products -> wrapped velocities in [0, 2 venc).

    Returns False when any pair product is exactly zero (masked voxel).
    """
    d = pa.shape[0]
    nc = y.shape[1]
    for i in range(d):
        re = 0.0
        im = 0.0
        a = pa[i]
        b = pb[i]
        for c in range(nc):
            ya = y[a, c]
            yb = y[b, c]
            re += ya.real * yb.real + ya.imag * yb.imag
            im += ya.imag * yb.real - ya.real * yb.imag
        if re == 0.0 and im == 0.0:
            return False
        th = math.atan2(im, re)
        if th < 0.0:
            th += _TWO_PI
        if th >= _TWO_PI:
            th = 0.0
        v = th / math.pi * venc[i]
        if v >= 2.0 * venc[i]:
            v = 0.0
        vt[i] = v
        rmag[i] = math.sqrt(re * re + im * im)
    return True


# ------------------------------------------------------- small linear algebra

@njit(cache=True)
def _jacobi_inplace(a, v):
    """Cyclic Jacobi eigendecomposition of a small symmetric matrix.

    ``a`` is reduced to (near-)diagonal in place; ``v`` receives the
    eigenvectors as columns.  Eigenvalues end up on diag(a), unsorted.
    """
    n = a.shape[0]
    for i in range(n):
        for j in range(n):
            v[i, j] = 1.0 if i == j else 0.0
    for _sweep in range(64):
        off = 0.0
        scale = 1e-300
        for p in range(n):
            if abs(a[p, p]) > scale:
                scale = abs(a[p, p])
            for q in range(p + 1, n):
                if abs(a[p, q]) > off:
                    off = abs(a[p, q])
        if off <= 1e-14 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                app = a[p, p]
                aqq = a[q, q]
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    if r != p and r != q:
                        arp = a[r, p]
                        arq = a[r, q]
                        a[r, p] = c * arp - s * arq
                        a[p, r] = a[r, p]
                        a[r, q] = c * arq + s * arp
                        a[q, r] = a[r, q]
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = c * vrp - s * vrq
                    v[r, q] = c * vrq + s * vrp


@njit(cache=True)
def jacobi_eigh(mat):
    """Eigenvalues (ascending) and eigenvectors of a symmetric matrix."""
    n = mat.shape[0]
    a = mat.copy()
    v = np.empty((n, n), np.float64)
    _jacobi_inplace(a, v)
    vals = np.empty(n, np.float64)
    for i in range(n):
        vals[i] = a[i, i]
    order = np.argsort(vals)
    return vals[order], v[:, order]


@njit(cache=True, inline="always")
def _data_weights(y, pa, pb, venc, mag, first, cov, scratch, evec, pinv, w):
    """Magnitude-driven velocity covariance -> pseudo-inverse and weights.

    Mirrors data_phase_cov + velocity_cov + spd_pseudo_inverse + blue_weights
    for one voxel.  Degenerate covariances (measure-zero under noise) fall
    back to equal weights with a zero pseudo-inverse.
    """
    ne = y.shape[0]
    nc = y.shape[1]
    d = pa.shape[0]
    for a in range(ne):
        tot = 0.0
        for b in range(nc):
            m = abs(y[a, b])
            mag[a, b] = m
            tot += m * m
        first[a] = tot
    for i in range(d):
        cross = 0.0
        for b in range(nc):
            cross += mag[pa[i], b] * mag[pb[i], b]
        if cross <= 0.0:
            for i2 in range(d):
                w[i2] = 1.0 / d
                for j2 in range(d):
                    pinv[i2, j2] = 0.0
            return
        for j in range(d):
            cov[i, j] = 0.0
        cov[i, i] = (first[pa[i]] + first[pb[i]]) / (2.0 * cross * cross)
    for i in range(d):
        for j in range(i + 1, d):
            e = np.int64(-1)
            if pa[i] == pa[j] or pa[i] == pb[j]:
                e = pa[i]
            elif pb[i] == pa[j] or pb[i] == pb[j]:
                e = pb[i]
            if e < 0:
                continue
            same_role = (e == pa[i] and e == pa[j]) or (e == pb[i] and e == pb[j])
            val = nc / (2.0 * first[e])
            if not same_role:
                val = -val
            cov[i, j] = val
            cov[j, i] = val
    # project onto the PSD cone, then scale phase -> velocity
    for i in range(d):
        for j in range(d):
            scratch[i, j] = cov[i, j]
    _jacobi_inplace(scratch, evec)
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for k in range(d):
                lam = scratch[k, k]
                if lam > 0.0:
                    acc += evec[i, k] * lam * evec[j, k]
            cov[i, j] = acc * venc[i] * venc[j] / (math.pi * math.pi)
    # pseudo-inverse with a relative eigenvalue cutoff
    for i in range(d):
        for j in range(d):
            scratch[i, j] = cov[i, j]
    _jacobi_inplace(scratch, evec)
    top = 0.0
    for k in range(d):
        if scratch[k, k] > top:
            top = scratch[k, k]
    if top <= 0.0:
        for i in range(d):
            w[i] = 1.0 / d
            for j in range(d):
                pinv[i, j] = 0.0
        return
    cut = _RANK_REL_CUTOFF * top
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for k in range(d):
                lam = scratch[k, k]
                if lam > cut:
                    acc += evec[i, k] * evec[j, k] / lam
            pinv[i, j] = acc
    denom = 0.0
    for i in range(d):
        raw = 0.0
        for j in range(d):
            raw += pinv[i, j]
        w[i] = raw
        denom += raw
    if denom <= 0.0:
        for i in range(d):
            w[i] = 1.0 / d
    else:
        for i in range(d):
            w[i] /= denom


# ----------------------------------------------------- candidate search core

@njit(cache=True, inline="always")
def _prom_trial(vt, venc, omega, h, w, pinv, bps, kbuf, bestk, dbuf):
    """Breakpoint candidate search for one voxel; returns (v_hat, nll).

    bestk receives the winning wrap counts.  Mirrors candidate_wrap_set +
    prom_from_wrapped: one representative per arc of the piecewise-constant
    wrap map, scored by the covariance-weighted wrapped residual, ties broken
    by lexicographically smallest k.
    """
    d = venc.shape[0]
    nb = 0
    for i in range(d):
        for j in range(h[i]):
            b = vt[i] + (2.0 * j + 1.0) * venc[i]
            b -= math.floor(b / omega) * omega
            if b >= omega:
                b -= omega
            if b < 0.0:
                b += omega
            bps[nb] = b
            nb += 1
    # insertion sort (nb is small: sum of wrap counts)
    for i in range(1, nb):
        key = bps[i]
        j = i - 1
        while j >= 0 and bps[j] > key:
            bps[j + 1] = bps[j]
            j -= 1
        bps[j + 1] = key
    tol = 1e-9 * omega
    m = 0
    for i in range(nb):
        drop = False
        if i > 0 and bps[i] - bps[i - 1] <= tol:
            drop = True
        if i == nb - 1 and nb > 1 and (bps[nb - 1] - bps[0]) >= omega * (1.0 - 1e-9):
            drop = True
        if not drop:
            bps[m] = bps[i]
            m += 1
    best_nll = np.inf
    best_v = 0.0
    for i in range(d):
        bestk[i] = np.int64(0)
    for arc in range(m):
        if m == 1:
            rep = bps[0] + 0.5 * omega
        elif arc < m - 1:
            rep = 0.5 * (bps[arc] + bps[arc + 1])
        else:
            rep = 0.5 * (bps[m - 1] + bps[0] + omega)
        rep -= math.floor(rep / omega) * omega
        if rep >= omega:
            rep -= omega
        if rep < 0.0:
            rep += omega
        vb = 0.0
        for i in range(d):
            k = math.ceil(-0.5 - (vt[i] - rep) / (2.0 * venc[i]))
            kbuf[i] = k
            vb += w[i] * (vt[i] + 2.0 * k * venc[i])
        vb -= math.floor(vb / omega) * omega
        if vb >= omega:
            vb -= omega
        if vb < 0.0:
            vb += omega
        for i in range(d):
            period = 2.0 * venc[i]
            diff = vt[i] - vb
            dbuf[i] = diff - np.rint(diff / period) * period
        nll = 0.0
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += pinv[i, j] * dbuf[j]
            nll += dbuf[i] * acc
        nll *= 0.5
        take = False
        if nll < best_nll:
            take = True
        elif nll == best_nll:
            for i in range(d):
                if kbuf[i] != bestk[i]:
                    take = kbuf[i] < bestk[i]
                    break
        if take:
            best_nll = nll
            best_v = vb
            for i in range(d):
                bestk[i] = kbuf[i]
    return best_v, best_nll


# --------------------------------------------------------- Monte Carlo drivers

@njit(cache=True)
def simulate_batch(seed, trial0, trials, v, gm1, s):
    """Simulated measurements for trials [trial0, trial0 + trials)."""
    ne = s.shape[0]
    nc = s.shape[1]
    out = np.empty((trials, ne, nc), np.complex128)
    cosph = np.cos(gm1 * v)
    sinph = np.sin(gm1 * v)
    for t in range(trials):
        base = _trial_base(seed, trial0 + t)
        _fill_trial(out[t], base, s, cosph, sinph)
    return out


@njit(cache=True, parallel=True)
def mc_unwrap_error_count(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                          omega, h, w, pinv):
    """Number of trials whose winning wrap counts differ from the truth
    (componentwise, modulo h)."""
    ne = s.shape[0]
    nc = s.shape[1]
    d = venc.shape[0]
    nb = int(np.sum(h))
    cosph = np.cos(gm1 * v)
    sinph = np.sin(gm1 * v)
    nchunks = (trials + _CHUNK - 1) // _CHUNK
    errors = 0
    for c in prange(nchunks):
        y = np.empty((ne, nc), np.complex128)
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        bps = np.empty(nb, np.float64)
        kbuf = np.empty(d, np.int64)
        bestk = np.empty(d, np.int64)
        dbuf = np.empty(d, np.float64)
        local = 0
        lo = trial0 + c * _CHUNK
        hi = min(lo + _CHUNK, trial0 + trials)
        for t in range(lo, hi):
            base = _trial_base(seed, t)
            _fill_trial(y, base, s, cosph, sinph)
            _wrapped_pairs(y, pa, pb, venc, vt, rmag)
            _prom_trial(vt, venc, omega, h, w, pinv, bps, kbuf, bestk, dbuf)
            bad = 0
            for i in range(d):
                ktrue = np.int64(np.rint((vt[i] - v) / (2.0 * venc[i])))
                if (bestk[i] + ktrue) % h[i] != 0:
                    bad = 1
            local += bad
        errors += local
    return errors


@njit(cache=True, parallel=True)
def mc_tube_labels(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                   omega, h, w, pinv):
    """Per-trial wrap-error labels (k_win - k_true) mod h, shape (trials, D)."""
    ne = s.shape[0]
    nc = s.shape[1]
    d = venc.shape[0]
    nb = int(np.sum(h))
    cosph = np.cos(gm1 * v)
    sinph = np.sin(gm1 * v)
    out = np.empty((trials, d), np.int64)
    nchunks = (trials + _CHUNK - 1) // _CHUNK
    for c in prange(nchunks):
        y = np.empty((ne, nc), np.complex128)
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        bps = np.empty(nb, np.float64)
        kbuf = np.empty(d, np.int64)
        bestk = np.empty(d, np.int64)
        dbuf = np.empty(d, np.float64)
        lo = trial0 + c * _CHUNK
        hi = min(lo + _CHUNK, trial0 + trials)
        for t in range(lo, hi):
            base = _trial_base(seed, t)
            _fill_trial(y, base, s, cosph, sinph)
            _wrapped_pairs(y, pa, pb, venc, vt, rmag)
            _prom_trial(vt, venc, omega, h, w, pinv, bps, kbuf, bestk, dbuf)
            for i in range(d):
                ktrue = np.int64(np.rint((vt[i] - v) / (2.0 * venc[i])))
                out[t - trial0, i] = (bestk[i] + ktrue) % h[i]
    return out


@njit(cache=True, parallel=True)
def mc_prom_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                 omega, h, w, pinv, use_data_cov):
    """Per-trial estimates in [0, omega); data-driven covariance optional."""
    ne = s.shape[0]
    nc = s.shape[1]
    d = venc.shape[0]
    nb = int(np.sum(h))
    cosph = np.cos(gm1 * v)
    sinph = np.sin(gm1 * v)
    out = np.empty(trials, np.float64)
    nchunks = (trials + _CHUNK - 1) // _CHUNK
    for c in prange(nchunks):
        y = np.empty((ne, nc), np.complex128)
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        bps = np.empty(nb, np.float64)
        kbuf = np.empty(d, np.int64)
        bestk = np.empty(d, np.int64)
        dbuf = np.empty(d, np.float64)
        mag = np.empty((ne, nc), np.float64)
        first = np.empty(ne, np.float64)
        cov = np.empty((d, d), np.float64)
        scratch = np.empty((d, d), np.float64)
        evec = np.empty((d, d), np.float64)
        pinv_t = np.empty((d, d), np.float64)
        w_t = np.empty(d, np.float64)
        lo = trial0 + c * _CHUNK
        hi = min(lo + _CHUNK, trial0 + trials)
        for t in range(lo, hi):
            base = _trial_base(seed, t)
            _fill_trial(y, base, s, cosph, sinph)
            _wrapped_pairs(y, pa, pb, venc, vt, rmag)
            if use_data_cov:
                _data_weights(y, pa, pb, venc, mag, first, cov, scratch,
                              evec, pinv_t, w_t)
                vb, _ = _prom_trial(vt, venc, omega, h, w_t, pinv_t,
                                    bps, kbuf, bestk, dbuf)
            else:
                vb, _ = _prom_trial(vt, venc, omega, h, w, pinv,
                                    bps, kbuf, bestk, dbuf)
            out[t - trial0] = vb
    return out


@njit(cache=True)
def _grid_nll_argmin(vt, venc, pinv, omega, grid_n):
    """Dense scan of the weighted wrapped-residual cost over [0, omega)."""
    d = venc.shape[0]
    step = omega / grid_n
    best = np.inf
    bestg = 0
    if d == 3:
        # scalar registers keep the 3-pair scan out of array indexing
        t0 = 2.0 * venc[0]
        t1 = 2.0 * venc[1]
        t2 = 2.0 * venc[2]
        i0 = 1.0 / t0
        i1 = 1.0 / t1
        i2 = 1.0 / t2
        vt0 = vt[0]
        vt1 = vt[1]
        vt2 = vt[2]
        p00 = pinv[0, 0]
        p11 = pinv[1, 1]
        p22 = pinv[2, 2]
        p01 = 2.0 * pinv[0, 1]
        p02 = 2.0 * pinv[0, 2]
        p12 = 2.0 * pinv[1, 2]
        for g in range(grid_n):
            vg = g * step
            d0 = vt0 - vg
            d0 -= np.rint(d0 * i0) * t0
            d1 = vt1 - vg
            d1 -= np.rint(d1 * i1) * t1
            d2 = vt2 - vg
            d2 -= np.rint(d2 * i2) * t2
            q = d0 * (p00 * d0 + p01 * d1 + p02 * d2) \
                + d1 * (p11 * d1 + p12 * d2) + d2 * p22 * d2
            if q < best:
                best = q
                bestg = g
    else:
        for g in range(grid_n):
            vg = g * step
            q = 0.0
            for i in range(d):
                period = 2.0 * venc[i]
                di = vt[i] - vg
                di -= np.rint(di / period) * period
                acc = 0.0
                for j in range(d):
                    period = 2.0 * venc[j]
                    dj = vt[j] - vg
                    dj -= np.rint(dj / period) * period
                    acc += pinv[i, j] * dj
                q += di * acc
            if q < best:
                best = q
                bestg = g
    return bestg * step


@njit(cache=True, parallel=True)
def mc_grid_agreement(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                      omega, h, w, pinv, grid_n):
    """Trials where the candidate search lands within one grid step of a
    brute-force scan of the same cost."""
    ne = s.shape[0]
    nc = s.shape[1]
    d = venc.shape[0]
    nb = int(np.sum(h))
    step = omega / grid_n
    cosph = np.cos(gm1 * v)
    sinph = np.sin(gm1 * v)
    hits = np.zeros(trials, np.int64)
    for t in prange(trials):
        y = np.empty((ne, nc), np.complex128)
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        bps = np.empty(nb, np.float64)
        kbuf = np.empty(d, np.int64)
        bestk = np.empty(d, np.int64)
        dbuf = np.empty(d, np.float64)
        base = _trial_base(seed, trial0 + t)
        _fill_trial(y, base, s, cosph, sinph)
        if not _wrapped_pairs(y, pa, pb, venc, vt, rmag):
            continue
        vhat, _ = _prom_trial(vt, venc, omega, h, w, pinv,
                              bps, kbuf, bestk, dbuf)
        gv = _grid_nll_argmin(vt, venc, pinv, omega, grid_n)
        diff = vhat - gv
        diff -= np.rint(diff / omega) * omega
        if abs(diff) <= step * (1.0 + 1e-9):
            hits[t] = 1
    return int(np.sum(hits))


@njit(cache=True, inline="always")
def _sdv_corrected(vt21, vt31, venc21, venc31):
    """Dual-venc unwrap: coarse pair selects the fine pair's wrap lobe."""
    c21 = vt21 if vt21 < venc21 else vt21 - 2.0 * venc21
    c31 = vt31 if vt31 < venc31 else vt31 - 2.0 * venc31
    r = (c21 - c31) / (2.0 * venc31)
    mshift = np.rint(r)
    mmax = math.floor(venc21 / venc31) * 1.0
    if mshift > mmax:
        mshift = mmax
    elif mshift < -mmax:
        mshift = -mmax
    return c31 + 2.0 * mshift * venc31


@njit(cache=True, parallel=True)
def mc_sdv_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc):
    """Per-trial dual-venc estimates (pairs 21 and 31 only)."""
    ne = s.shape[0]
    nc = s.shape[1]
    d = venc.shape[0]
    cosph = np.cos(gm1 * v)
    sinph = np.sin(gm1 * v)
    out = np.empty(trials, np.float64)
    nchunks = (trials + _CHUNK - 1) // _CHUNK
    for c in prange(nchunks):
        y = np.empty((ne, nc), np.complex128)
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        lo = trial0 + c * _CHUNK
        hi = min(lo + _CHUNK, trial0 + trials)
        for t in range(lo, hi):
            base = _trial_base(seed, t)
            _fill_trial(y, base, s, cosph, sinph)
            _wrapped_pairs(y, pa, pb, venc, vt, rmag)
            out[t - trial0] = _sdv_corrected(vt[0], vt[1], venc[0], venc[1])
    return out


@njit(cache=True, parallel=True)
def mc_grid2_vhat(seed, trial0, trials, v, gm1, s, pa, pb, venc,
                  grid_start, grid_step, grid_count, weighted):
    """Grid minimizer of the two-pair phasor misfit (pairs 31 and 32).

    weighted=False gives the plain cost sum(1 - cos(pi g / venc_l - theta_l));
    weighted=True multiplies each term by |r_l|^2.  First grid minimum wins.
    """
    ne = s.shape[0]
    nc = s.shape[1]
    d = venc.shape[0]
    cosph = np.cos(gm1 * v)
    sinph = np.sin(gm1 * v)
    out = np.empty(trials, np.float64)
    rot31 = complex(math.cos(math.pi * grid_step / venc[1]),
                    math.sin(math.pi * grid_step / venc[1]))
    rot32 = complex(math.cos(math.pi * grid_step / venc[2]),
                    math.sin(math.pi * grid_step / venc[2]))
    for t in prange(trials):
        y = np.empty((ne, nc), np.complex128)
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        base = _trial_base(seed, trial0 + t)
        _fill_trial(y, base, s, cosph, sinph)
        _wrapped_pairs(y, pa, pb, venc, vt, rmag)
        w31 = rmag[1] * rmag[1] if weighted else 1.0
        w32 = rmag[2] * rmag[2] if weighted else 1.0
        th31 = math.pi * vt[1] / venc[1]
        th32 = math.pi * vt[2] / venc[2]
        a31 = math.pi * grid_start / venc[1] - th31
        a32 = math.pi * grid_start / venc[2] - th32
        z31 = complex(math.cos(a31), math.sin(a31))
        z32 = complex(math.cos(a32), math.sin(a32))
        best = np.inf
        ibest = 0
        for i in range(grid_count):
            cost = w31 * (1.0 - z31.real) + w32 * (1.0 - z32.real)
            if cost < best:
                best = cost
                ibest = i
            z31 *= rot31
            z32 *= rot32
        out[t] = grid_start + ibest * grid_step
    return out


@njit(cache=True, parallel=True)
def mc_mle_vhat(seed, trial0, trials, v, gm1, s, grid_start, grid_step,
                grid_count):
    """Grid maximizer of the single-coil likelihood with nonnegative
    amplitudes.

    For one coil the profile cost at grid velocity g is
    max over unit x >= 0 of x' M(g) x with M_ab = Re(u_a conj(u_b)),
    u_a = y_a exp(-i gm1_a g).  M is the Gram matrix of the 2-vectors
    (Re u_a, Im u_a), so each support set's top eigenpair comes from a 2x2
    in closed form: the candidate eigenvalue is (c_S +- |q_S|) / 2 with
    q_S = sum u_a^2, c_S = sum |u_a|^2, accepted when the matching
    eigenvector is sign-consistent on the support.  Singleton supports are
    always feasible, so the maximum exists.  First grid maximum wins.
    """
    ne = s.shape[0]
    cosph = np.cos(gm1 * v)
    sinph = np.sin(gm1 * v)
    out = np.empty(trials, np.float64)
    nmask = (1 << ne) - 1
    for t in prange(trials):
        y = np.empty((ne, 1), np.complex128)
        base = _trial_base(seed, trial0 + t)
        _fill_trial(y, base, s, cosph, sinph)
        u = np.empty(ne, np.complex128)
        rot = np.empty(ne, np.complex128)
        for a in range(ne):
            ang0 = -gm1[a] * grid_start
            u[a] = y[a, 0] * complex(math.cos(ang0), math.sin(ang0))
            angs = -gm1[a] * grid_step
            rot[a] = complex(math.cos(angs), math.sin(angs))
        best_lam = -1.0
        ibest = 0
        for i in range(grid_count):
            lam_v = 0.0
            for mask in range(1, nmask + 1):
                qre = 0.0
                qim = 0.0
                csum = 0.0
                nsup = 0
                for a in range(ne):
                    if (mask >> a) & 1:
                        ua = u[a]
                        qre += ua.real * ua.real - ua.imag * ua.imag
                        qim += 2.0 * ua.real * ua.imag
                        csum += ua.real * ua.real + ua.imag * ua.imag
                        nsup += 1
                qabs = math.hypot(qre, qim)
                lam1 = 0.5 * (csum + qabs)
                if lam1 <= lam_v:
                    continue
                if qabs <= 1e-300:
                    cpsi = 1.0
                    spsi = 0.0
                else:
                    ratio = qre / qabs
                    cpsi = math.sqrt(0.5 * (1.0 + ratio))
                    spsi = math.sqrt(0.5 * (1.0 - ratio))
                    if qim < 0.0:
                        spsi = -spsi
                # top eigenvector: feasible iff sign-consistent on support
                npos = 0
                nneg = 0
                for a in range(ne):
                    if (mask >> a) & 1:
                        x = u[a].real * cpsi + u[a].imag * spsi
                        if x >= 0.0:
                            npos += 1
                        if x <= 0.0:
                            nneg += 1
                if npos == nsup or nneg == nsup:
                    lam_v = lam1
                    continue
                lam2 = 0.5 * (csum - qabs)
                if lam2 <= lam_v:
                    continue
                npos = 0
                nneg = 0
                for a in range(ne):
                    if (mask >> a) & 1:
                        x = -u[a].real * spsi + u[a].imag * cpsi
                        if x >= 0.0:
                            npos += 1
                        if x <= 0.0:
                            nneg += 1
                if npos == nsup or nneg == nsup:
                    lam_v = lam2
            if lam_v > best_lam:
                best_lam = lam_v
                ibest = i
            for a in range(ne):
                u[a] *= rot[a]
        out[t] = grid_start + ibest * grid_step
    return out


# ------------------------------------------------------------ field drivers

@njit(cache=True, parallel=True)
def field_prom(y, pa, pb, venc, omega, h, w, pinv, use_data_cov, top_m):
    """Voxelwise candidate search over a flattened field y (V, Ne, Nc).

    Returns (cand_v, cand_nll, cand_k, n_cand): per voxel up to top_m
    candidates with distinct wrap counts, sorted by (nll, lex k).  All-zero
    voxels get n_cand = 0 and NaN candidates.
    """
    nvox = y.shape[0]
    ne = y.shape[1]
    nc = y.shape[2]
    d = venc.shape[0]
    nb = int(np.sum(h))
    cand_v = np.full((nvox, top_m), np.nan)
    cand_nll = np.full((nvox, top_m), np.nan)
    cand_k = np.zeros((nvox, top_m, d), np.int64)
    n_cand = np.zeros(nvox, np.int64)
    nchunks = (nvox + _CHUNK - 1) // _CHUNK
    for c in prange(nchunks):
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        bps = np.empty(nb, np.float64)
        kbuf = np.empty(d, np.int64)
        dbuf = np.empty(d, np.float64)
        mag = np.empty((ne, nc), np.float64)
        first = np.empty(ne, np.float64)
        cov = np.empty((d, d), np.float64)
        scratch = np.empty((d, d), np.float64)
        evec = np.empty((d, d), np.float64)
        pinv_t = np.empty((d, d), np.float64)
        w_t = np.empty(d, np.float64)
        kall = np.empty((nb + 1, d), np.int64)
        vall = np.empty(nb + 1, np.float64)
        nall = np.empty(nb + 1, np.float64)
        used = np.empty(nb + 1, np.bool_)
        lo = c * _CHUNK
        hi = min(lo + _CHUNK, nvox)
        for vox in range(lo, hi):
            ok = _wrapped_pairs(y[vox], pa, pb, venc, vt, rmag)
            if not ok:
                continue
            if use_data_cov:
                _data_weights(y[vox], pa, pb, venc, mag, first, cov, scratch,
                              evec, pinv_t, w_t)
                wv = w_t
                pv = pinv_t
            else:
                wv = w
                pv = pinv
            # breakpoints and arcs, mirroring _prom_trial
            nbp = 0
            for i in range(d):
                for j in range(h[i]):
                    b = vt[i] + (2.0 * j + 1.0) * venc[i]
                    b -= math.floor(b / omega) * omega
                    if b >= omega:
                        b -= omega
                    if b < 0.0:
                        b += omega
                    bps[nbp] = b
                    nbp += 1
            for i in range(1, nbp):
                key = bps[i]
                j = i - 1
                while j >= 0 and bps[j] > key:
                    bps[j + 1] = bps[j]
                    j -= 1
                bps[j + 1] = key
            tol = 1e-9 * omega
            m = 0
            for i in range(nbp):
                drop = False
                if i > 0 and bps[i] - bps[i - 1] <= tol:
                    drop = True
                if i == nbp - 1 and nbp > 1 and \
                        (bps[nbp - 1] - bps[0]) >= omega * (1.0 - 1e-9):
                    drop = True
                if not drop:
                    bps[m] = bps[i]
                    m += 1
            nuniq = 0
            for arc in range(m):
                if m == 1:
                    rep = bps[0] + 0.5 * omega
                elif arc < m - 1:
                    rep = 0.5 * (bps[arc] + bps[arc + 1])
                else:
                    rep = 0.5 * (bps[m - 1] + bps[0] + omega)
                rep -= math.floor(rep / omega) * omega
                if rep >= omega:
                    rep -= omega
                if rep < 0.0:
                    rep += omega
                for i in range(d):
                    kbuf[i] = math.ceil(-0.5 - (vt[i] - rep) / (2.0 * venc[i]))
                dup = False
                for r in range(nuniq):
                    same = True
                    for i in range(d):
                        if kall[r, i] != kbuf[i]:
                            same = False
                            break
                    if same:
                        dup = True
                        break
                if dup:
                    continue
                vb = 0.0
                for i in range(d):
                    vb += wv[i] * (vt[i] + 2.0 * kbuf[i] * venc[i])
                vb -= math.floor(vb / omega) * omega
                if vb >= omega:
                    vb -= omega
                if vb < 0.0:
                    vb += omega
                for i in range(d):
                    period = 2.0 * venc[i]
                    diff = vt[i] - vb
                    dbuf[i] = diff - np.rint(diff / period) * period
                nll = 0.0
                for i in range(d):
                    acc = 0.0
                    for j in range(d):
                        acc += pv[i, j] * dbuf[j]
                    nll += dbuf[i] * acc
                nll *= 0.5
                for i in range(d):
                    kall[nuniq, i] = kbuf[i]
                vall[nuniq] = vb
                nall[nuniq] = nll
                used[nuniq] = False
                nuniq += 1
            nkeep = min(top_m, nuniq)
            n_cand[vox] = nkeep
            for slot in range(nkeep):
                pick = -1
                for r in range(nuniq):
                    if used[r]:
                        continue
                    if pick < 0:
                        pick = r
                        continue
                    better = False
                    if nall[r] < nall[pick]:
                        better = True
                    elif nall[r] == nall[pick]:
                        for i in range(d):
                            if kall[r, i] != kall[pick, i]:
                                better = kall[r, i] < kall[pick, i]
                                break
                    if better:
                        pick = r
                used[pick] = True
                cand_v[vox, slot] = vall[pick]
                cand_nll[vox, slot] = nall[pick]
                for i in range(d):
                    cand_k[vox, slot, i] = kall[pick, i]
    return cand_v, cand_nll, cand_k, n_cand


@njit(cache=True, parallel=True)
def field_sdv(y, pa, pb, venc):
    """Voxelwise dual-venc estimates; NaN for all-zero voxels."""
    nvox = y.shape[0]
    d = venc.shape[0]
    out = np.full(nvox, np.nan)
    for vox in prange(nvox):
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        if _wrapped_pairs(y[vox], pa, pb, venc, vt, rmag):
            out[vox] = _sdv_corrected(vt[0], vt[1], venc[0], venc[1])
    return out


@njit(cache=True, parallel=True)
def field_grid2(y, pa, pb, venc, grid_start, grid_step, grid_count, weighted):
    """Voxelwise two-pair phasor grid search; NaN for all-zero voxels."""
    nvox = y.shape[0]
    d = venc.shape[0]
    out = np.full(nvox, np.nan)
    rot31 = complex(math.cos(math.pi * grid_step / venc[1]),
                    math.sin(math.pi * grid_step / venc[1]))
    rot32 = complex(math.cos(math.pi * grid_step / venc[2]),
                    math.sin(math.pi * grid_step / venc[2]))
    for vox in prange(nvox):
        vt = np.empty(d, np.float64)
        rmag = np.empty(d, np.float64)
        if not _wrapped_pairs(y[vox], pa, pb, venc, vt, rmag):
            continue
        w31 = rmag[1] * rmag[1] if weighted else 1.0
        w32 = rmag[2] * rmag[2] if weighted else 1.0
        a31 = math.pi * grid_start / venc[1] - math.pi * vt[1] / venc[1]
        a32 = math.pi * grid_start / venc[2] - math.pi * vt[2] / venc[2]
        z31 = complex(math.cos(a31), math.sin(a31))
        z32 = complex(math.cos(a32), math.sin(a32))
        best = np.inf
        ibest = 0
        for i in range(grid_count):
            cost = w31 * (1.0 - z31.real) + w32 * (1.0 - z32.real)
            if cost < best:
                best = cost
                ibest = i
            z31 *= rot31
            z32 *= rot32
        out[vox] = grid_start + ibest * grid_step
    return out
