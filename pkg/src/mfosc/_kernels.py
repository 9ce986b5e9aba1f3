"""Hot loops for the particle system (numba, nogil).

All kernels advance one replica sequentially so that a trajectory depends
only on its own counter-based noise stream: results are bitwise identical
for any thread count, and replicas parallelize at the caller level.
Reductions over particles run in fixed index order for the same reason.
"""

from __future__ import annotations

import numpy as np
import numba as nb
from numba import float64, int64, uint64

from .rng import normal_pair

FIELD_CONSTANT = 0
FIELD_LINEAR = 1
FIELD_FHN = 2


@nb.njit(float64(float64), inline="always", cache=True)
def _psi(t):
    if t <= 1.0:
        return 1.0
    if t >= 2.0:
        return 0.0
    u = 2.0 - t
    a = np.exp(-1.0 / u)
    b = np.exp(-1.0 / (1.0 - u))
    return a / (a + b)


@nb.njit(inline="always", cache=True)
def _field(code, fp, x, out):
    """Cutoff drift field at point x (length d), written into out."""
    d = x.shape[0]
    if code == FIELD_CONSTANT:
        for c in range(d):
            out[c] = fp[c]
        return
    if code == FIELD_LINEAR:
        for r in range(d):
            acc = 0.0
            for c in range(d):
                acc += fp[r * d + c] * x[c]
            out[r] = acc
    else:  # FIELD_FHN, d == 2
        a = fp[0]
        b = fp[1]
        cc = fp[2]
        out[0] = x[0] - x[0] * x[0] * x[0] / 3.0 - x[1]
        out[1] = (x[0] + a - b * x[1]) / cc
    R = fp[fp.shape[0] - 1]
    if R > 0.0:
        r2 = 0.0
        for c in range(d):
            r2 += x[c] * x[c]
        w = _psi(np.sqrt(r2) / R)
        if w != 1.0:
            for c in range(d):
                out[c] *= w


@nb.njit(float64(float64), inline="always", cache=True)
def _dpsi(t):
    if t <= 1.0 or t >= 2.0:
        return 0.0
    u = 2.0 - t
    a = np.exp(-1.0 / u)
    b = np.exp(-1.0 / (1.0 - u))
    da = a / (u * u)
    db = b / ((1.0 - u) * (1.0 - u))
    return -(da * b + a * db) / ((a + b) * (a + b))


@nb.njit(inline="always", cache=True)
def _field_raw(code, fp, x, out):
    d = x.shape[0]
    if code == FIELD_CONSTANT:
        for c in range(d):
            out[c] = fp[c]
    elif code == FIELD_LINEAR:
        for r in range(d):
            acc = 0.0
            for c in range(d):
                acc += fp[r * d + c] * x[c]
            out[r] = acc
    else:
        a = fp[0]
        b = fp[1]
        cc = fp[2]
        out[0] = x[0] - x[0] * x[0] * x[0] / 3.0 - x[1]
        out[1] = (x[0] + a - b * x[1]) / cc


@nb.njit(inline="always", cache=True)
def _field_jacobian(code, fp, x, J, fbuf):
    """Analytic Jacobian of the cutoff field at x, written into J (d, d)."""
    d = x.shape[0]
    if code == FIELD_CONSTANT:
        for r in range(d):
            for c in range(d):
                J[r, c] = 0.0
        return
    if code == FIELD_LINEAR:
        for r in range(d):
            for c in range(d):
                J[r, c] = fp[r * d + c]
    else:
        b = fp[1]
        cc = fp[2]
        J[0, 0] = 1.0 - x[0] * x[0]
        J[0, 1] = -1.0
        J[1, 0] = 1.0 / cc
        J[1, 1] = -b / cc
    R = fp[fp.shape[0] - 1]
    if R > 0.0:
        r2 = 0.0
        for c in range(d):
            r2 += x[c] * x[c]
        r = np.sqrt(r2)
        t = r / R
        w = _psi(t)
        if w != 1.0:
            dw = _dpsi(t)
            _field_raw(code, fp, x, fbuf)
            for rr in range(d):
                for c in range(d):
                    J[rr, c] *= w
            if r > 0.0 and dw != 0.0:
                for rr in range(d):
                    for c in range(d):
                        J[rr, c] += fbuf[rr] * dw * x[c] / (R * r)


@nb.njit(cache=True, nogil=True)
def field_batch(pts, code, fp, out):
    """Cutoff drift field at each row of pts; out is (n, d)."""
    n, d = pts.shape
    x = np.empty(d)
    f = np.empty(d)
    for i in range(n):
        for c in range(d):
            x[c] = pts[i, c]
        _field(code, fp, x, f)
        for c in range(d):
            out[i, c] = f[c]
    return out


@nb.njit(cache=True, nogil=True)
def smoothed_field_batch(Z, nodes, weights, code, fp, out):
    """Quadrature average of the field around each row of Z; out is (n, d)."""
    n, d = Z.shape
    q = nodes.shape[0]
    x = np.empty(d)
    f = np.empty(d)
    for i in range(n):
        for c in range(d):
            out[i, c] = 0.0
        for kq in range(q):
            for c in range(d):
                x[c] = nodes[kq, c] + Z[i, c]
            _field(code, fp, x, f)
            for c in range(d):
                out[i, c] += weights[kq] * f[c]
    return out


@nb.njit(cache=True, nogil=True)
def smoothed_jacobian_batch(Z, nodes, weights, code, fp, out):
    """Quadrature average of the field Jacobian; out is (n, d, d)."""
    n, d = Z.shape
    q = nodes.shape[0]
    x = np.empty(d)
    f = np.empty(d)
    J = np.empty((d, d))
    for i in range(n):
        for r in range(d):
            for c in range(d):
                out[i, r, c] = 0.0
        for kq in range(q):
            for c in range(d):
                x[c] = nodes[kq, c] + Z[i, c]
            _field_jacobian(code, fp, x, J, f)
            for r in range(d):
                for c in range(d):
                    out[i, r, c] += weights[kq] * J[r, c]
    return out


@nb.njit(cache=True, nogil=True)
def em_chunk(Y, m, code, fp, kvec, svec, delta, dt, key0, key1, step0, nsteps):
    """Advance the recentered system by nsteps Euler-Maruyama steps in place.

    Returns -1 on success, else the first step index at which the state went
    non-finite.
    """
    N, d = Y.shape
    nblocks = (d + 1) // 2
    sq = np.sqrt(2.0 * dt)
    G = np.empty((N, d))
    xi = np.empty((N, d))
    x = np.empty(d)
    f = np.empty(d)
    for s in range(nsteps):
        step = uint64(step0 + s)
        # drift field and its ensemble mean (fixed-order accumulation)
        for c in range(d):
            f[c] = 0.0
        gbar = np.zeros(d)
        for i in range(N):
            for c in range(d):
                x[c] = Y[i, c] + m[c]
            _field(code, fp, x, f)
            for c in range(d):
                G[i, c] = f[c]
                gbar[c] += f[c]
        for c in range(d):
            gbar[c] /= N
        # counter-based Gaussian increments and their mean
        xibar = np.zeros(d)
        for i in range(N):
            for blk in range(nblocks):
                z0, z1 = normal_pair(step, uint64(i), uint64(blk), key0, key1)
                c = 2 * blk
                xi[i, c] = z0
                xibar[c] += z0
                if c + 1 < d:
                    xi[i, c + 1] = z1
                    xibar[c + 1] += z1
        for c in range(d):
            xibar[c] /= N
        # apply increments; exact recentering folds the residual into m
        resid = np.zeros(d)
        check = 0.0
        for i in range(N):
            for c in range(d):
                Y[i, c] += (
                    dt * (delta * (G[i, c] - gbar[c]) - kvec[c] * Y[i, c])
                    + sq * svec[c] * (xi[i, c] - xibar[c])
                )
                resid[c] += Y[i, c]
        for c in range(d):
            resid[c] /= N
        for i in range(N):
            for c in range(d):
                Y[i, c] -= resid[c]
        for c in range(d):
            m[c] += dt * delta * gbar[c] + sq * svec[c] * xibar[c] + resid[c]
            check += m[c]
        if not np.isfinite(check):
            return step0 + s
    return -1


@nb.njit(cache=True, nogil=True)
def em_record_m(Y, m, code, fp, kvec, svec, delta, dt, key0, key1,
                nsteps, rec_every, mrec):
    """Run nsteps, recording m into mrec every rec_every steps (incl. t=0)."""
    d = m.shape[0]
    for c in range(d):
        mrec[0, c] = m[c]
    nrec = nsteps // rec_every
    for r in range(nrec):
        bad = em_chunk(Y, m, code, fp, kvec, svec, delta, dt, key0, key1,
                       r * rec_every, rec_every)
        if bad >= 0:
            return bad
        for c in range(d):
            mrec[r + 1, c] = m[c]
    return -1


@nb.njit(cache=True, nogil=True)
def coupling_chunk(X, Xbar, Z, code, fp, kvec, svec, delta, dt,
                   key0, key1, pkey0, pkey1, step0, nsteps, err_out):
    """Advance the coupled triple (ensemble, reference copies, mean-law proxy).

    X: coupled ensemble in original coordinates, driven by its own empirical
    mean.  Xbar: reference trajectories consuming the identical noise as X
    but coupled to the proxy mean.  Z: self-consistent proxy ensemble with
    its own noise stream.  err_out[s] receives mean_i |X_i - Xbar_i| after
    each step.
    """
    N, d = X.shape
    M = Z.shape[0]
    nblocks = (d + 1) // 2
    sq = np.sqrt(2.0 * dt)
    x = np.empty(d)
    f = np.empty(d)
    FX = np.empty((N, d))
    FXb = np.empty((N, d))
    FZ = np.empty((M, d))
    for s in range(nsteps):
        step = uint64(step0 + s)
        xbar = np.zeros(d)
        for i in range(N):
            for c in range(d):
                x[c] = X[i, c]
                xbar[c] += X[i, c]
            _field(code, fp, x, f)
            for c in range(d):
                FX[i, c] = f[c]
        for c in range(d):
            xbar[c] /= N
        zbar = np.zeros(d)
        for j in range(M):
            for c in range(d):
                x[c] = Z[j, c]
                zbar[c] += Z[j, c]
            _field(code, fp, x, f)
            for c in range(d):
                FZ[j, c] = f[c]
        for c in range(d):
            zbar[c] /= M
        for i in range(N):
            for c in range(d):
                x[c] = Xbar[i, c]
            _field(code, fp, x, f)
            for c in range(d):
                FXb[i, c] = f[c]
        # advance ensemble and reference with the same draws
        err = 0.0
        for i in range(N):
            for blk in range(nblocks):
                z0, z1 = normal_pair(step, uint64(i), uint64(blk), key0, key1)
                c = 2 * blk
                X[i, c] += dt * (delta * FX[i, c] - kvec[c] * (X[i, c] - xbar[c])) + sq * svec[c] * z0
                Xbar[i, c] += dt * (delta * FXb[i, c] - kvec[c] * (Xbar[i, c] - zbar[c])) + sq * svec[c] * z0
                if c + 1 < d:
                    X[i, c + 1] += dt * (delta * FX[i, c + 1] - kvec[c + 1] * (X[i, c + 1] - xbar[c + 1])) + sq * svec[c + 1] * z1
                    Xbar[i, c + 1] += dt * (delta * FXb[i, c + 1] - kvec[c + 1] * (Xbar[i, c + 1] - zbar[c + 1])) + sq * svec[c + 1] * z1
            di = 0.0
            for c in range(d):
                dc = X[i, c] - Xbar[i, c]
                di += dc * dc
            err += np.sqrt(di)
        err_out[s] = err / N
        # advance proxy with its own stream
        for j in range(M):
            for blk in range(nblocks):
                z0, z1 = normal_pair(step, uint64(j), uint64(blk), pkey0, pkey1)
                c = 2 * blk
                Z[j, c] += dt * (delta * FZ[j, c] - kvec[c] * (Z[j, c] - zbar[c])) + sq * svec[c] * z0
                if c + 1 < d:
                    Z[j, c + 1] += dt * (delta * FZ[j, c + 1] - kvec[c + 1] * (Z[j, c + 1] - zbar[c + 1])) + sq * svec[c + 1] * z1
    return -1
