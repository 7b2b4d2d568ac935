"""Pure numpy implementations of the batched small-matrix kernels.

These mirror the compiled kernels in ``_kernels.pyx`` operation for operation
and serve as the fallback when the extension is not built.
"""
import numpy as np

NAME = "numpy"


def dets(m: np.ndarray) -> np.ndarray:
    """Determinants of a stack of square matrices, shape (..., n, n) -> (...)."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    if n == 1:
        return m[..., 0, 0].copy()
    if n == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    if n == 3:
        return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
                - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
                + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))
    return np.linalg.det(m)


def _eig3(g: np.ndarray) -> np.ndarray:
    a, d, f = g[:, 0, 0], g[:, 1, 1], g[:, 2, 2]
    b, c, e = g[:, 0, 1], g[:, 0, 2], g[:, 1, 2]
    p1 = b * b + c * c + e * e
    q = (a + d + f) / 3.0
    p2 = (a - q) ** 2 + (d - q) ** 2 + (f - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    ba, bd, bf = (a - q) / safe, (d - q) / safe, (f - q) / safe
    bb, bc, be = b / safe, c / safe, e / safe
    r = 0.5 * (ba * (bd * bf - be * be) - bb * (bb * bf - be * bc) + bc * (bb * be - bd * bc))
    phi = np.arccos(np.clip(r, -1.0, 1.0)) / 3.0
    l1 = q + 2.0 * p * np.cos(phi)
    l3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l2 = 3.0 * q - l1 - l3
    out = np.stack([l3, l2, l1], axis=-1)
    flat = p == 0
    if flat.any():
        out[flat] = np.sort(np.stack([a[flat], d[flat], f[flat]], axis=-1), axis=-1)
    return out


def _jacobi(g: np.ndarray, sweeps: int = 60) -> np.ndarray:
    a = g.copy()
    n = a.shape[-1]
    scale = np.maximum(np.abs(a).max(axis=(1, 2)), 1e-300)
    for _ in range(sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2, axis=(1, 2)))
        if np.all(off <= 1e-16 * scale):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = np.abs(apq) > 1e-300
                if not active.any():
                    continue
                theta = (a[:, q, q] - a[:, p, p]) / np.where(active, 2.0 * apq, 1.0)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(theta == 0, 1.0, t)
                t = np.where(active, t, 0.0)
                cs = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * cs
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = cs[:, None] * ap - sn[:, None] * aq
                a[:, :, q] = sn[:, None] * ap + cs[:, None] * aq
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = cs[:, None] * rp - sn[:, None] * rq
                a[:, q, :] = sn[:, None] * rp + cs[:, None] * rq
    return np.sort(np.diagonal(a, axis1=1, axis2=2), axis=-1)


def sym_eigvals(g: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a stack of symmetric matrices, (..., n, n) -> (..., n)."""
    g = np.asarray(g, dtype=float)
    shape = g.shape[:-2]
    n = g.shape[-1]
    flat = g.reshape(-1, n, n)
    if n == 1:
        out = flat[:, :, 0].copy()
    elif n == 2:
        a, b, d = flat[:, 0, 0], flat[:, 0, 1], flat[:, 1, 1]
        m = 0.5 * (a + d)
        r = np.hypot(0.5 * (a - d), b)
        out = np.stack([m - r, m + r], axis=-1)
    elif n == 3:
        out = _eig3(flat)
    else:
        out = _jacobi(flat)
    return out.reshape(shape + (n,))


def block_stats(blocks: np.ndarray, weights: np.ndarray, colscale: np.ndarray):
    """Weighted Gram and determinant statistics of stacked square blocks.

    blocks: (N, R, n, n); weights: (N, R); colscale: (N, n) column factors.
    Returns (gram_max (N,), det_sum (N,), block_gram_max (N, R), block_det (N, R)).
    Determinants use the unscaled blocks; Gram matrices use the column-scaled ones.
    """
    blocks = np.asarray(blocks, dtype=float)
    det = dets(blocks)
    scaled = blocks * colscale[:, None, None, :]
    grams = np.einsum("nrij,nrik->nrjk", scaled, scaled)
    block_gram_max = sym_eigvals(grams)[..., -1]
    total = np.einsum("nr,nrjk->njk", weights, grams)
    gram_max = sym_eigvals(total)[..., -1]
    det_sum = np.einsum("nr,nr->n", weights, det)
    return gram_max, det_sum, block_gram_max, det
