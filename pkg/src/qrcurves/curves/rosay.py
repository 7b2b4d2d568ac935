"""Rosay's non-discrete map u: B^2 -> C^2 and the K-quasiregular curve F: C -> C^k built from it.

On the annulus A_n = {2^-n <= |z| <= 2^(1-n)} everything is computed in the
normalized variable w = 2^n z, |w| in [1, 2], where

    2^(n^2/2) z^(n-1) (z - a_n)           = 2^(-n^2/2) w^(n-1) (w - 3/2)
    2^((n-1)^2/2) z^(n-2) (z - a_(n-1))   = 2^(-n^2/2) sqrt2 w^(n-2) (w - 3)
    2^((n+1)^2/2) z^n (z - a_(n+1))       = 2^(-n^2/2) sqrt2 w^n (w - 3/4)

The common factor 2^(-n^2/2) w^(n-2) is carried as a base-2 log scale and a
unit phase, so the dilatation ratio never under- or overflows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .field import Ball, BlockRuns, CurveField, Whole

SQRT2 = math.sqrt(2.0)
LOGISTIC_RATE = 0.61

# (offset, width, weight) of the base steps in each cutoff profile; see scripts/fit_rosay_cutoff.py
PSI_STEPS = (
    (0.0, 0.25, 0.13243), (0.0625, 0.25, 0.04912), (0.1875, 0.25, 0.09071), (0.25, 0.25, 0.06299),
    (0.375, 0.25, 0.08812), (0.4375, 0.25, 0.04781), (0.5625, 0.25, 0.05426), (0.75, 0.25, 0.05785),
    (0.0, 0.5, 0.10494), (0.125, 0.5, 0.13462), (0.375, 0.5, 0.09193), (0.5, 0.5, 0.0852),
)
CHI_STEPS = (
    (0.0, 0.25, 0.09745), (0.1875, 0.25, 0.10392), (0.3125, 0.25, 0.01233), (0.375, 0.25, 0.11929),
    (0.5, 0.25, 0.00797), (0.5625, 0.25, 0.11676), (0.6875, 0.25, 0.02462), (0.75, 0.25, 0.16043),
    (0.0, 0.5, 0.1057), (0.125, 0.5, 0.02457), (0.375, 0.5, 0.14239), (0.5, 0.5, 0.08458),
)
CALIBRATION_NS = tuple(range(10, 31)) + (32, 48, 64, 96, 128, 192, 256, 384, 512)


class RosayN0Error(ValueError):
    """No admissible even n0 below the cap for the requested K."""

    def __init__(self, message: str, C_hat: float):
        super().__init__(message)
        self.C_hat = C_hat


def base_step(s: np.ndarray, a: float = LOGISTIC_RATE) -> tuple[np.ndarray, np.ndarray]:
    """C-infinity step from 0 (s <= 0) to 1 (s >= 1), flat to all orders at both ends, and its derivative."""
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    si = np.where(inside, s, 0.5)
    q = a * (1.0 - 2.0 * si) / (si * (1.0 - si))
    val = np.where(inside, expit(-q), np.where(s >= 1, 1.0, 0.0))
    der = np.where(inside, expit(q) * expit(-q) * a * (2 * si * si - 2 * si + 1) / (si * (1 - si)) ** 2, 0.0)
    return val, der


def mixture_step(s: np.ndarray, steps=PSI_STEPS) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of shifted, rescaled base steps."""
    total = sum(w for _, _, w in steps)
    val = np.zeros_like(np.asarray(s, dtype=float))
    der = np.zeros_like(val)
    for s0, width, w in steps:
        v, d = base_step((s - s0) / width)
        val += (w / total) * v
        der += (w / total) * d / width
    return val, der


def psi_cutoff(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """psi as a function of rho = 2^n |z|: 1 for rho <= 1, 0 for rho >= 5/4; with d psi / d rho."""
    v, d = mixture_step((rho - 1.0) / 0.25, PSI_STEPS)
    return 1.0 - v, -d / 0.25


def chi_cutoff(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """chi = 1 - phi: 0 for rho <= 7/4, 1 for rho >= 2; with d chi / d rho."""
    v, d = mixture_step((rho - 1.75) / 0.25, CHI_STEPS)
    return v, d / 0.25


def cutoff_slope_bound() -> float:
    """max |d psi_n| and |d phi_n| in units of 2^n (the curve requires <= 6)."""
    s = np.linspace(0.0, 1.0, 200001)
    return 4.0 * max(mixture_step(s, PSI_STEPS)[1].max(), mixture_step(s, CHI_STEPS)[1].max())


# ---------------------------------------------------------------------------
# annulus-local evaluation


@dataclass
class AnnulusLocal:
    """Normalized quantities on A_n: true value = 2^log2_scale * phase * data."""

    n: np.ndarray
    pure: np.ndarray       # w^(n-1)(w - 3/2) / w^(n-2)
    mixed: np.ndarray      # sqrt2 (chi w^(n-2)(w-3) + psi w^n (w-3/4)) / w^(n-2)
    d_pure: np.ndarray     # d/dw of the pure component, / w^(n-2)
    d_mixed: np.ndarray    # d/dw of the mixed component, / w^(n-2)
    db_mixed: np.ndarray   # d/dwbar of the mixed component, / w^(n-2)
    phase: np.ndarray      # (w/|w|)^(n-2)
    log2_abs: np.ndarray   # log2 |w|^(n-2) - n^2/2


def annulus_index(z: np.ndarray) -> np.ndarray:
    """n with 2^-n <= |z| < 2^(1-n)."""
    _, e = np.frexp(np.abs(z))
    return (1 - e).astype(np.int64)


def annulus_local(w: np.ndarray, n: np.ndarray) -> AnnulusLocal:
    """Evaluate the normalized Rosay components at w = 2^n z."""
    w = np.asarray(w, dtype=complex)
    n = np.broadcast_to(np.asarray(n, dtype=np.int64), w.shape)
    nf = n.astype(float)
    rho = np.abs(w)
    psi, dpsi = psi_cutoff(rho)
    chi, dchi = chi_cutoff(rho)
    pure = w * (w - 1.5)
    d_pure = (nf - 1.0) * (w - 1.5) + w
    pa, pb = w - 3.0, w * w * (w - 0.75)
    dpa = (nf - 2.0) * (w - 3.0) / w + 1.0
    dpb = nf * w * (w - 0.75) + w * w
    dz_rho, dzb_rho = np.conj(w) / (2.0 * rho), w / (2.0 * rho)
    mixed = SQRT2 * (chi * pa + psi * pb)
    d_mixed = SQRT2 * (chi * dpa + psi * dpb + (dchi * pa + dpsi * pb) * dz_rho)
    db_mixed = SQRT2 * (dchi * pa + dpsi * pb) * dzb_rho
    unit = w / rho
    phase = unit ** (nf - 2.0)
    log2_abs = (nf - 2.0) * np.log2(rho) - nf * nf / 2.0
    return AnnulusLocal(n=n, pure=pure, mixed=mixed, d_pure=d_pure, d_mixed=d_mixed, db_mixed=db_mixed,
                        phase=phase, log2_abs=log2_abs)


def dilatation_ratio(loc: AnnulusLocal) -> np.ndarray:
    """|d_zbar u| / |d_z u| (0 where both vanish)."""
    num = np.abs(loc.db_mixed)
    den = np.sqrt(np.abs(loc.d_pure) ** 2 + np.abs(loc.d_mixed) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(num == 0, 0.0, num / den)


def polar_grid(resolution: int) -> np.ndarray:
    r = np.linspace(1.0, 2.0, resolution)
    th = np.linspace(0.0, 2.0 * np.pi, resolution, endpoint=False)
    R, T = np.meshgrid(r, th, indexing="ij")
    return (R * np.exp(1j * T)).ravel()


@lru_cache(maxsize=64)
def annulus_sup_ratio(n: int, resolution: int = 400) -> float:
    """sup over a resolution x resolution polar grid of A_n of the dilatation ratio."""
    return float(dilatation_ratio(annulus_local(polar_grid(resolution), n)).max())


@dataclass(frozen=True)
class ConstantEstimate:
    C_hat: float
    argmax_n: int
    table: tuple[tuple[int, float], ...]
    resolution: int


def measure_C(ns=CALIBRATION_NS, resolution: int = 400) -> ConstantEstimate:
    table = tuple((int(n), annulus_sup_ratio(int(n), resolution)) for n in ns)
    prods = [n * r for n, r in table]
    i = int(np.argmax(prods))
    return ConstantEstimate(C_hat=float(prods[i]), argmax_n=table[i][0], table=table, resolution=resolution)


def choose_n0(K: float, C_hat: float, n_min: int = 10, cap: int = 10_000) -> int:
    """Least even n0 >= n_min with C_hat / n0 <= (K-1)/(K+1)."""
    if not K > 1:
        raise ValueError(f"K must be > 1, got {K}")
    need = C_hat * (K + 1.0) / (K - 1.0)
    n0 = max(n_min, math.ceil(need - 1e-12))
    n0 += n0 % 2
    if n0 > cap:
        raise RosayN0Error(f"no even n0 <= {cap} satisfies C/n0 <= (K-1)/(K+1) for K={K}: "
                           f"measured C_hat={C_hat:.6g} needs n0 >= {need:.6g}", C_hat)
    return n0


# ---------------------------------------------------------------------------
# curve fields


def _wirtinger_block(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(N,) complex d/dz and d/dzbar -> (N, 2, 2) real differential."""
    s, d = a + b, a - b
    return np.stack([np.stack([s.real, -d.imag], -1), np.stack([s.imag, d.real], -1)], axis=-2)


def _c2(z: np.ndarray) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1)


def _u_runs(z: np.ndarray, jac: bool, k: int = 2) -> BlockRuns:
    """Rosay's u on B^2 minus 0 (plus u(0) = 0) as runs [u1, u2, zeros]."""
    N = len(z)
    zero = z == 0
    zz = np.where(zero, 0.75, z)
    n = annulus_index(zz)
    w = zz * np.exp2(n.astype(float))
    loc = annulus_local(w, n)
    even = (n % 2) == 0
    if not jac:
        c1 = np.where(even, loc.pure, loc.mixed) * loc.phase
        c2 = np.where(even, loc.mixed, loc.pure) * loc.phase
        data = np.stack([_c2(c1), _c2(c2), np.zeros((N, 2))], axis=1)
        scale = loc.log2_abs
    else:
        a_pure, a_mixed = loc.d_pure * loc.phase, loc.d_mixed * loc.phase
        b_mixed = loc.db_mixed * loc.phase
        zeros = np.zeros(N, dtype=complex)
        j_pure, j_mixed = _wirtinger_block(a_pure, zeros), _wirtinger_block(a_mixed, b_mixed)
        data = np.stack([np.where(even[:, None, None], j_pure, j_mixed),
                         np.where(even[:, None, None], j_mixed, j_pure), np.zeros((N, 2, 2))], axis=1)
        scale = np.repeat((loc.log2_abs + n)[:, None], 2, axis=1)
    data[zero] = 0.0
    scale = np.where(zero if scale.ndim == 1 else zero[:, None], 0.0, scale)
    weights = np.tile([1.0, 1.0, float(k - 2)], (N, 1))
    return BlockRuns(data, weights, scale)


def _complex(pts: np.ndarray) -> np.ndarray:
    return pts[:, 0] + 1j * pts[:, 1]


def rosay_u() -> CurveField:
    """u = (u1, u2) on the closed unit disc, as a map into C^2 = (R^2)^2."""
    return CurveField(name="rosay_u", n=2, k=2, domain=Ball((0.0, 0.0), 1.0),
                      run_evaluator=lambda p: _u_runs(_complex(p), False),
                      run_differential=lambda p: _u_runs(_complex(p), True),
                      seam_distance=None, params={"cutoff": "logistic mixture", "rate": LOGISTIC_RATE})


def _tail_runs(z: np.ndarray, n0: int, jac: bool, k: int) -> BlockRuns:
    """f1 = 2^(n0^2/2) z^(n0-1) (z - a_n0), f2 = 0, in log-scaled polar form."""
    N = len(z)
    r = np.abs(z)
    unit = z / r
    a0 = 1.5 * 2.0 ** -n0
    if not jac:
        c1 = unit ** (n0 - 1) * (z - a0)
        data = np.stack([_c2(c1), np.zeros((N, 2)), np.zeros((N, 2))], axis=1)
        scale = n0 * n0 / 2.0 + (n0 - 1) * np.log2(r)
    else:
        c1 = unit ** (n0 - 2) * ((n0 - 1) * (z - a0) + z)
        data = np.stack([_wirtinger_block(c1, np.zeros(N, dtype=complex)), np.zeros((N, 2, 2)),
                         np.zeros((N, 2, 2))], axis=1)
        scale = np.repeat((n0 * n0 / 2.0 + (n0 - 2) * np.log2(r))[:, None], 2, axis=1)
    return BlockRuns(data, np.tile([1.0, 1.0, float(k - 2)], (N, 1)), scale)


def _f_runs(z: np.ndarray, n0: int, jac: bool, k: int) -> BlockRuns:
    inner = np.abs(z) <= 1.5 * 2.0 ** -n0
    out = _u_runs(z, jac, k)
    if (~inner).any():
        tail = _tail_runs(z[~inner], n0, jac, k)
        out.data[~inner] = tail.data
        out.log2_scale[~inner] = tail.log2_scale
    return out


@dataclass(frozen=True)
class RosayCurve:
    field: CurveField
    n0: int
    C_hat: float
    estimate: ConstantEstimate


def rosay_F(K: float, k: int = 2, n0_cap: int = 10_000, resolution: int = 400, ns=CALIBRATION_NS) -> RosayCurve:
    """F = (f1, f2, 0, ..., 0): C -> C^k with n0 chosen from the measured constant."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    est = measure_C(tuple(ns), resolution)
    n0 = choose_n0(K, est.C_hat, n_min=min(ns), cap=n0_cap)
    field = CurveField(name="rosay_F", n=2, k=k, domain=Whole(2),
                       run_evaluator=lambda p: _f_runs(_complex(p), n0, False, k),
                       run_differential=lambda p: _f_runs(_complex(p), n0, True, k),
                       params={"K": K, "k": k, "n0": n0, "C_hat": est.C_hat, "C_argmax_n": est.argmax_n,
                               "resolution": resolution, "n0_cap": n0_cap,
                               "calibration_ns": list(ns)})
    return RosayCurve(field=field, n0=n0, C_hat=est.C_hat, estimate=est)


def zero_points(n_values) -> np.ndarray:
    """The zeros a_n = (3/2) 2^-n on the positive real axis, as (N, 2) points."""
    a = np.array([1.5 * 2.0 ** -n for n in n_values])
    return np.stack([a, np.zeros_like(a)], axis=1)
