# cython: language_level=3
"""Compiled batched small-matrix kernels (same algorithms as ``_kernels_py``)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, acos, cos, hypot, M_PI

cnp.import_array()

NAME = "cython"
DEF MAXN = 8


cdef double _det(const double* m, int n) noexcept nogil:
    cdef double a[MAXN * MAXN]
    cdef int i, j, r, piv
    cdef double d, t, best
    if n == 1:
        return m[0]
    if n == 2:
        return m[0] * m[3] - m[1] * m[2]
    if n == 3:
        return (m[0] * (m[4] * m[8] - m[5] * m[7])
                - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6]))
    for i in range(n * n):
        a[i] = m[i]
    d = 1.0
    for j in range(n):
        piv = j
        best = fabs(a[j * n + j])
        for r in range(j + 1, n):
            if fabs(a[r * n + j]) > best:
                best = fabs(a[r * n + j])
                piv = r
        if best == 0.0:
            return 0.0
        if piv != j:
            d = -d
            for i in range(n):
                t = a[j * n + i]
                a[j * n + i] = a[piv * n + i]
                a[piv * n + i] = t
        d *= a[j * n + j]
        for r in range(j + 1, n):
            t = a[r * n + j] / a[j * n + j]
            for i in range(j, n):
                a[r * n + i] -= t * a[j * n + i]
    return d


cdef void _eig_sym(const double* g, int n, double* out) noexcept nogil:
    """Ascending eigenvalues of the symmetric n x n matrix g (row-major)."""
    cdef double a[MAXN * MAXN]
    cdef double aa, b, c, dd, e, f, p1, q, p2, p, r, phi, l1, l2, l3, mid, rad
    cdef double ba, bd, bf, bb, bc, be, off, scale, apq, theta, t, cs, sn, xp, xq
    cdef int i, j, k, sweep, pp, qq
    if n == 1:
        out[0] = g[0]
        return
    if n == 2:
        mid = 0.5 * (g[0] + g[3])
        rad = hypot(0.5 * (g[0] - g[3]), g[1])
        out[0] = mid - rad
        out[1] = mid + rad
        return
    if n == 3:
        aa = g[0]; dd = g[4]; f = g[8]
        b = g[1]; c = g[2]; e = g[5]
        p1 = b * b + c * c + e * e
        q = (aa + dd + f) / 3.0
        p2 = (aa - q) * (aa - q) + (dd - q) * (dd - q) + (f - q) * (f - q) + 2.0 * p1
        p = sqrt(p2 / 6.0)
        if p == 0.0:
            out[0] = aa; out[1] = dd; out[2] = f
        else:
            ba = (aa - q) / p; bd = (dd - q) / p; bf = (f - q) / p
            bb = b / p; bc = c / p; be = e / p
            r = 0.5 * (ba * (bd * bf - be * be) - bb * (bb * bf - be * bc) + bc * (bb * be - bd * bc))
            if r < -1.0:
                r = -1.0
            elif r > 1.0:
                r = 1.0
            phi = acos(r) / 3.0
            l1 = q + 2.0 * p * cos(phi)
            l3 = q + 2.0 * p * cos(phi + 2.0 * M_PI / 3.0)
            l2 = 3.0 * q - l1 - l3
            out[0] = l3; out[1] = l2; out[2] = l1
    else:
        for i in range(n * n):
            a[i] = g[i]
        scale = 0.0
        for i in range(n * n):
            if fabs(a[i]) > scale:
                scale = fabs(a[i])
        if scale < 1e-300:
            scale = 1e-300
        for sweep in range(60):
            off = 0.0
            for i in range(n):
                for j in range(i + 1, n):
                    off += a[i * n + j] * a[i * n + j]
            if sqrt(off) <= 1e-16 * scale:
                break
            for pp in range(n - 1):
                for qq in range(pp + 1, n):
                    apq = a[pp * n + qq]
                    if fabs(apq) <= 1e-300:
                        continue
                    theta = (a[qq * n + qq] - a[pp * n + pp]) / (2.0 * apq)
                    if theta == 0.0:
                        t = 1.0
                    elif theta > 0.0:
                        t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                    else:
                        t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                    cs = 1.0 / sqrt(t * t + 1.0)
                    sn = t * cs
                    for k in range(n):
                        xp = a[k * n + pp]
                        xq = a[k * n + qq]
                        a[k * n + pp] = cs * xp - sn * xq
                        a[k * n + qq] = sn * xp + cs * xq
                    for k in range(n):
                        xp = a[pp * n + k]
                        xq = a[qq * n + k]
                        a[pp * n + k] = cs * xp - sn * xq
                        a[qq * n + k] = sn * xp + cs * xq
        for i in range(n):
            out[i] = a[i * n + i]
    # insertion sort, ascending
    for i in range(1, n):
        t = out[i]
        j = i - 1
        while j >= 0 and out[j] > t:
            out[j + 1] = out[j]
            j -= 1
        out[j + 1] = t


def dets(m):
    """Determinants of a stack of square matrices, shape (..., n, n) -> (...)."""
    arr = np.ascontiguousarray(m, dtype=np.float64)
    cdef int n = arr.shape[arr.ndim - 1]
    if n > MAXN:
        return np.linalg.det(arr)
    flat = arr.reshape(-1, n * n)
    cdef const double[:, ::1] mv = flat
    cdef Py_ssize_t count = flat.shape[0], i
    out = np.empty(count)
    cdef double[::1] ov = out
    with nogil:
        for i in range(count):
            ov[i] = _det(&mv[i, 0], n)
    return out.reshape(arr.shape[:arr.ndim - 2])


def sym_eigvals(g):
    """Ascending eigenvalues of a stack of symmetric matrices, (..., n, n) -> (..., n)."""
    arr = np.ascontiguousarray(g, dtype=np.float64)
    cdef int n = arr.shape[arr.ndim - 1]
    if n > MAXN:
        return np.linalg.eigvalsh(arr)
    flat = arr.reshape(-1, n * n)
    cdef const double[:, ::1] mv = flat
    cdef Py_ssize_t count = flat.shape[0], i
    out = np.empty((count, n))
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(count):
            _eig_sym(&mv[i, 0], n, &ov[i, 0])
    return out.reshape(arr.shape[:arr.ndim - 2] + (n,))


def block_stats(blocks, weights, colscale):
    """Weighted Gram and determinant statistics of stacked square blocks.

    blocks: (N, R, n, n); weights: (N, R); colscale: (N, n) column factors.
    Returns (gram_max (N,), det_sum (N,), block_gram_max (N, R), block_det (N, R)).
    """
    b_arr = np.ascontiguousarray(blocks, dtype=np.float64)
    cdef Py_ssize_t N = b_arr.shape[0], R = b_arr.shape[1]
    cdef int n = b_arr.shape[2]
    if n > MAXN:
        from . import _kernels_py
        return _kernels_py.block_stats(blocks, weights, colscale)
    cdef const double[:, :, ::1] bv = b_arr.reshape(N, R, n * n)
    cdef const double[:, ::1] wv = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[:, ::1] sv = np.ascontiguousarray(colscale, dtype=np.float64)
    gram_max = np.empty(N)
    det_sum = np.empty(N)
    block_gram_max = np.empty((N, R))
    block_det = np.empty((N, R))
    cdef double[::1] gm = gram_max, ds = det_sum
    cdef double[:, ::1] bgm = block_gram_max, bd = block_det
    cdef double tot[MAXN * MAXN]
    cdef double gr[MAXN * MAXN]
    cdef double ev[MAXN]
    cdef const double* blk
    cdef double acc, w, d
    cdef Py_ssize_t i, r
    cdef int j, k, l
    with nogil:
        for i in range(N):
            for j in range(n * n):
                tot[j] = 0.0
            acc = 0.0
            for r in range(R):
                blk = &bv[i, r, 0]
                w = wv[i, r]
                d = _det(blk, n)
                bd[i, r] = d
                acc += w * d
                for j in range(n):
                    for k in range(j, n):
                        gr[j * n + k] = 0.0
                        for l in range(n):
                            gr[j * n + k] += blk[l * n + j] * blk[l * n + k]
                        gr[j * n + k] *= sv[i, j] * sv[i, k]
                        gr[k * n + j] = gr[j * n + k]
                for j in range(n * n):
                    tot[j] += w * gr[j]
                _eig_sym(gr, n, ev)
                bgm[i, r] = ev[n - 1]
            ds[i] = acc
            _eig_sym(tot, n, ev)
            gm[i] = ev[n - 1]
    return gram_max, det_sum, block_gram_max, block_det
