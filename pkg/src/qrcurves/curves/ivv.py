"""A non-constant quasiregular vol^x-curve R^3 -> (R^3)^k that vanishes for t <= 0.

k is in the millions for the measured Lipschitz constant of A, so every map built from A
is evaluated strip-locally. On the strip t in [2^-l, 2^(1-l)] write
t = 2^(1-l) u with u in [1/2, 1]. Every component block is then one of three
O(1) blocks times 2^-l:

    i < l :  2u A(2x)                        (l - 1 copies)
    i = l :  tau 2A(x) + (1 - tau) A(2x)     (1 copy, tau = 2u - 1)
    i > l :  2u A(x)                         (k - l copies)

The x-columns of the differential carry the factor 2^-l, the t-column does not.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .branched import cover_seam_distance, cover_values_and_jacobian, measure_cover
from .field import BlockRuns, CurveField, DomainError, Strip, Whole


def ivv_choose_k(n: int, L: float) -> int:
    """Least k with (k-1)(1/(2L))^(n-1) - (10L)^n >= 1, in exact rational arithmetic."""
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    if not L >= 1:
        raise ValueError(f"L must be >= 1, got {L}")
    Lq = Fraction(L)
    need = (1 + (10 * Lq) ** n) * (2 * Lq) ** (n - 1)
    k = math.ceil(need) + 1
    return k


def choice_of_k_lhs(n: int, L: float, k: int) -> Fraction:
    Lq = Fraction(L)
    return (k - 1) * (1 / (2 * Lq)) ** (n - 1) - (10 * Lq) ** n


# ---------------------------------------------------------------------------
# s and h


def ivv_s(n: int = 3) -> CurveField:
    """s(x, t) = t A(x) on R^2 x [0, 1]."""
    def evaluator(pts):
        vals, _ = cover_values_and_jacobian(pts[:, :2])
        return pts[:, 2:3] * vals

    def differential(pts):
        vals, jac = cover_values_and_jacobian(pts[:, :2])
        return np.concatenate([pts[:, 2, None, None] * jac, vals[:, :, None]], axis=2)

    return CurveField(name="ivv_s", n=n, k=1, domain=Strip(n, 0.0, 1.0), evaluator=evaluator,
                      differential=differential, seam_distance=lambda p: cover_seam_distance(p[:, :2]))


def ivv_h(n: int = 3) -> CurveField:
    """h(x, t) = tau 2A(x) + (1 - tau) A(2x), tau = 2t - 1, on R^2 x [1/2, 1]."""
    def evaluator(pts):
        tau = 2.0 * pts[:, 2:3] - 1.0
        a1, _ = cover_values_and_jacobian(pts[:, :2])
        a2, _ = cover_values_and_jacobian(2.0 * pts[:, :2])
        return tau * 2.0 * a1 + (1.0 - tau) * a2

    def differential(pts):
        tau = (2.0 * pts[:, 2] - 1.0)[:, None, None]
        a1, d1 = cover_values_and_jacobian(pts[:, :2])
        a2, d2 = cover_values_and_jacobian(2.0 * pts[:, :2])
        dx = tau * 2.0 * d1 + (1.0 - tau) * 2.0 * d2
        dt = 2.0 * (2.0 * a1 - a2)
        return np.concatenate([dx, dt[:, :, None]], axis=2)

    def seams(p):
        return np.minimum(cover_seam_distance(p[:, :2]), cover_seam_distance(2.0 * p[:, :2]) / 2.0)

    return CurveField(name="ivv_h", n=n, k=1, domain=Strip(n, 0.5, 1.0), evaluator=evaluator,
                      differential=differential, seam_distance=seams)


# ---------------------------------------------------------------------------
# strip-local H


def strip_of(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(l, u) with t = 2^(1-l) u, u in [1/2, 1); t = 1 maps to (1, 1)."""
    m, e = np.frexp(np.asarray(t, dtype=float))
    ell = (1 - e).astype(np.int64)
    one = m * np.exp2(e) == 1.0
    ell = np.where(one, 1, ell)
    u = np.where(one, 1.0, m)
    return ell, u


def h_strip_values(x: np.ndarray, ell: np.ndarray, u: np.ndarray, k: int) -> BlockRuns:
    a1, _ = cover_values_and_jacobian(x)
    a2, _ = cover_values_and_jacobian(2.0 * x)
    tau = (2.0 * u - 1.0)[:, None]
    data = np.stack([2.0 * u[:, None] * a2, tau * 2.0 * a1 + (1.0 - tau) * a2, 2.0 * u[:, None] * a1], axis=1)
    weights = np.stack([ell - 1, np.ones_like(ell), k - ell], axis=1).astype(float)
    return BlockRuns(data, weights, -ell.astype(float))


def h_strip_jacobian(x: np.ndarray, ell: np.ndarray, u: np.ndarray, k: int) -> BlockRuns:
    a1, d1 = cover_values_and_jacobian(x)
    a2, d2 = cover_values_and_jacobian(2.0 * x)
    uu = u[:, None, None]
    tau = 2.0 * uu - 1.0
    j_low = np.concatenate([4.0 * uu * d2, a2[:, :, None]], axis=2)
    j_mid = np.concatenate([tau * 2.0 * d1 + (1.0 - tau) * 2.0 * d2, (2.0 * a1 - a2)[:, :, None]], axis=2)
    j_high = np.concatenate([2.0 * uu * d1, a1[:, :, None]], axis=2)
    data = np.stack([j_low, j_mid, j_high], axis=1)
    weights = np.stack([ell - 1, np.ones_like(ell), k - ell], axis=1).astype(float)
    scale = np.zeros((len(x), 3))
    scale[:, :2] = -ell[:, None]
    return BlockRuns(data, weights, scale)


def _check_k(k: int, L: float, check: bool) -> None:
    if check and k < ivv_choose_k(3, L):
        raise ValueError(f"k={k} is below the admissible value {ivv_choose_k(3, L)} for L={L}")


def _strip_seams(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    ell, u = strip_of(np.maximum(t, 1e-300))
    width = np.exp2(-ell.astype(float))
    dt = np.minimum(t - width, 2.0 * width - t)
    return np.minimum(np.minimum(cover_seam_distance(x), cover_seam_distance(2.0 * x) / 2.0), dt)


def ivv_H(k: int | None = None, grid: int = 600, check: bool = True) -> CurveField:
    """H = (h_1, ..., h_k) on R^2 x [2^-k, 1]."""
    L = measure_cover(grid).L
    k = ivv_choose_k(3, L) if k is None else k
    _check_k(k, L, check)
    lo = 2.0 ** -k

    def local(pts):
        t = pts[:, 2]
        if k >= 1000:
            # 2^-k is not representable; the only grid point in strip k is t = 2^-k itself
            ell, u = strip_of(np.where(t > 0, t, 0.5))
            ell = np.where(t > 0, ell, k)
            u = np.where(t > 0, u, 0.5)
        else:
            ell, u = strip_of(t)
        return ell, u

    def run_eval(pts):
        ell, u = local(pts)
        return h_strip_values(pts[:, :2], ell, u, k)

    def run_diff(pts):
        ell, u = local(pts)
        return h_strip_jacobian(pts[:, :2], ell, u, k)

    return CurveField(name="ivv_H", n=3, k=k, domain=Strip(3, lo, 1.0), run_evaluator=run_eval,
                      run_differential=run_diff, seam_distance=lambda p: _strip_seams(p[:, :2], p[:, 2]),
                      params={"k": k, "L_hat": L, "measurement_grid": grid})


# ---------------------------------------------------------------------------
# G = H o xi


def xi_strip(t: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """(l, u) of xi(t) = (2t - 1) + (2 - 2t) 2^-k without forming 2^-k when it underflows."""
    tau = 2.0 * np.asarray(t, dtype=float) - 1.0
    if k < 1000:
        return strip_of(tau + (1.0 - tau) * 2.0 ** -k)
    ell, u = strip_of(np.where(tau > 0, tau, 0.5))
    return np.where(tau > 0, ell, k), np.where(tau > 0, u, 0.5)


def xi_derivative(k: int) -> float:
    return 2.0 - 2.0 ** (1 - k)


def g_local_values(x: np.ndarray, t: np.ndarray, k: int) -> BlockRuns:
    ell, u = xi_strip(t, k)
    return h_strip_values(x, ell, u, k)


def g_local_jacobian(x: np.ndarray, t: np.ndarray, k: int) -> BlockRuns:
    ell, u = xi_strip(t, k)
    runs = h_strip_jacobian(x, ell, u, k)
    runs.data[..., 2] *= xi_derivative(k)
    return runs


def _g_seams(x: np.ndarray, t: np.ndarray, k: int) -> np.ndarray:
    tau = 2.0 * t - 1.0
    ell, _ = xi_strip(t, k)
    width = np.exp2(-ell.astype(float))
    # strip boundaries of xi(t) pulled back through the affine map (slope about 2)
    dt = np.minimum(np.abs(tau - width), np.abs(2.0 * width - tau)) / 2.0
    return np.minimum(np.minimum(cover_seam_distance(x), cover_seam_distance(2.0 * x) / 2.0), dt)


def ivv_G(k: int | None = None, grid: int = 600, check: bool = True) -> CurveField:
    """G = H o xi on R^2 x [1/2, 1]."""
    L = measure_cover(grid).L
    k = ivv_choose_k(3, L) if k is None else k
    _check_k(k, L, check)
    return CurveField(name="ivv_G", n=3, k=k, domain=Strip(3, 0.5, 1.0),
                      run_evaluator=lambda p: g_local_values(p[:, :2], p[:, 2], k),
                      run_differential=lambda p: g_local_jacobian(p[:, :2], p[:, 2], k),
                      seam_distance=lambda p: _g_seams(p[:, :2], p[:, 2], k),
                      params={"k": k, "L_hat": L, "measurement_grid": grid})


# ---------------------------------------------------------------------------
# F


class OutOfWindow(DomainError):
    pass


def f_strip(t: np.ndarray, ell_max: int) -> np.ndarray:
    ell, _ = strip_of(np.where(t > 0, t, 1.0))
    ell = np.where(t > 0, ell, 0)
    bad = (t > 0) & (np.abs(ell) > ell_max)
    if bad.any():
        raise OutOfWindow(f"t={float(t[np.argmax(bad)])!r} lies in strip {int(ell[np.argmax(bad)])}, "
                          f"outside the window |l| <= {ell_max}")
    return ell


def _f_local(pts: np.ndarray, ell_max: int):
    t = pts[:, 2]
    ell_f = f_strip(t, ell_max)
    pos = t > 0
    factor = np.exp2((ell_f - 1).astype(float))
    xs = pts[:, :2] * factor[:, None]
    ts = np.where(pos, t * factor, 1.0)
    return ell_f, pos, xs, ts


def f_values(pts: np.ndarray, k: int, ell_max: int) -> BlockRuns:
    ell_f, pos, xs, ts = _f_local(pts, ell_max)
    runs = g_local_values(xs, ts, k)
    runs.log2_scale = runs.log2_scale - k * (ell_f - 1).astype(float)
    runs.data[~pos] = 0.0
    runs.weights[~pos] = [0.0, 0.0, float(k)]
    runs.log2_scale[~pos] = 0.0
    return runs


def f_jacobian(pts: np.ndarray, k: int, ell_max: int) -> BlockRuns:
    ell_f, pos, xs, ts = _f_local(pts, ell_max)
    runs = g_local_jacobian(xs, ts, k)
    runs.log2_scale = runs.log2_scale + ((1 - k) * (ell_f - 1).astype(float))[:, None]
    runs.data[~pos] = 0.0
    runs.weights[~pos] = [0.0, 0.0, float(k)]
    runs.log2_scale[~pos] = 0.0
    return runs


def _f_seams(pts: np.ndarray, k: int, ell_max: int) -> np.ndarray:
    ell_f, pos, xs, ts = _f_local(pts, ell_max)
    scale = np.exp2(-(ell_f - 1).astype(float))
    inner = _g_seams(xs, ts, k) * scale
    t = pts[:, 2]
    width = np.exp2(-ell_f.astype(float))
    dt = np.minimum(np.abs(t - width), np.abs(2.0 * width - t))
    return np.where(pos, np.minimum(inner, dt), np.abs(t))


def ivv_F(k: int | None = None, ell_max: int = 12, grid: int = 600, check: bool = True) -> CurveField:
    """F(x, t) = 2^(-k(l-1)) G(2^(l-1) x, 2^(l-1) t) on strip l, and 0 for t <= 0."""
    L = measure_cover(grid).L
    k = ivv_choose_k(3, L) if k is None else k
    _check_k(k, L, check)
    return CurveField(name="ivv_F", n=3, k=k, domain=Whole(3),
                      run_evaluator=lambda p: f_values(p, k, ell_max),
                      run_differential=lambda p: f_jacobian(p, k, ell_max),
                      seam_distance=lambda p: _f_seams(p, k, ell_max),
                      params={"k": k, "L_hat": L, "ell_max": ell_max, "measurement_grid": grid})


def scaled_pullback(runs: BlockRuns) -> np.ndarray:
    """2^(l(n-1)) times the vol^x pullback of H on its strip: the scale-free part."""
    dets = np.linalg.det(runs.data)
    return np.einsum("nr,nr->n", runs.weights, dets)
