"""Differential analysis of curve fields: finite differences, distortion fields and inequality checks."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import linmap, sampling
from .curves.field import BlockRuns, Box, CurveField, DomainError
from .curves import rosay
from .exterior import NForm, comass, comass_closed_form, l1_norm

TOL = 1e-9


class StencilError(DomainError):
    """Finite-difference stencil leaves the domain."""


# ---------------------------------------------------------------------------
# sampled fields


@dataclass(frozen=True)
class GridField:
    """Values of a map on an axis-aligned lattice: node i sits at lower + i * spacing."""

    lower: np.ndarray
    spacing: np.ndarray
    values: np.ndarray       # shape grid_shape + (n*k,)
    n: int
    k: int
    order: int = 2

    def __post_init__(self):
        if self.order not in (2, 4):
            raise ValueError(f"stencil order must be 2 or 4, got {self.order}")
        if np.any(np.asarray(self.spacing) <= 0):
            raise ValueError("grid spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @classmethod
    def sample(cls, F: CurveField, lower, upper, shape: Sequence[int], order: int = 2) -> "GridField":
        lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        axes = [np.linspace(lo, hi, m) for lo, hi, m in zip(lower, upper, shape)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(shape))
        vals = F(pts).reshape(tuple(shape) + (F.n * F.k,))
        spacing = (upper - lower) / (np.asarray(shape) - 1)
        return cls(lower, spacing, vals, F.n, F.k, order)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[:-1]

    def node_index(self, x) -> tuple[int, ...]:
        idx = (np.asarray(x, dtype=float) - self.lower) / self.spacing
        r = np.round(idx)
        if np.abs(idx - r).max() > 1e-9:
            raise ValueError(f"point {list(x)} is not a lattice node")
        return tuple(int(i) for i in r)


# ---------------------------------------------------------------------------
# finite differences

CENTRAL = {2: ((-1, -0.5), (1, 0.5)), 4: ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12))}
ONE_SIDED = {2: ((0, -1.5), (1, 2.0), (2, -0.5)),
             4: ((0, -25 / 12), (1, 4.0), (2, -3.0), (3, 4 / 3), (4, -0.25))}


def _stencil_for(F: CurveField, x: np.ndarray, j: int, h: float, order: int):
    """Central stencil unless a declared seam lies within the stencil; then one-sided away from it."""
    width = (order // 2) * h
    if F.seam_distance is None:
        return CENTRAL[order], 1.0
    here = float(F.seam_distance(x[None])[0])
    if here > width:
        return CENTRAL[order], 1.0
    e = np.zeros_like(x)
    e[j] = 1.0
    fwd = F.seam_distance(np.array([x + s * h * e for s in range(1, order + 1)])).min()
    bwd = F.seam_distance(np.array([x - s * h * e for s in range(1, order + 1)])).min()
    return ONE_SIDED[order], (1.0 if fwd >= bwd else -1.0)


def jacobian_fd(F, x, h: float = 1e-5, order: int = 2) -> linmap.BlockLinearMap:
    """Finite-difference differential of a CurveField (any point) or a GridField (lattice node)."""
    x = np.asarray(x, dtype=float)
    if isinstance(F, GridField):
        if order not in (2, 4):
            raise ValueError(f"stencil order must be 2 or 4, got {order}")
        return _grid_jacobian(F, x)
    return linmap.BlockLinearMap(fd_matrix(F, x, h, order), F.n, F.k)


def fd_matrix(F: CurveField, x, h: float = 1e-5, order: int = 2) -> np.ndarray:
    """Finite-difference differential as a plain (outputs x n) matrix; the target need not be (R^n)^k."""
    if order not in (2, 4):
        raise ValueError(f"stencil order must be 2 or 4, got {order}")
    x = np.asarray(x, dtype=float)
    n = F.n
    cols = []
    for j in range(n):
        stencil, direction = _stencil_for(F, x, j, h, order)
        pts = []
        for off, _ in stencil:
            p = x.copy()
            p[j] += direction * off * h
            pts.append(p)
        pts = np.array(pts)
        if not np.all(F.domain.contains(pts)):
            raise StencilError(f"stencil at {x.tolist()} with h={h} leaves the domain of {F.name}")
        vals = F(pts)
        coeff = np.array([c for _, c in stencil])
        cols.append(direction * (coeff @ vals) / h)
    return np.stack(cols, axis=1)


def _grid_jacobian(G: GridField, x: np.ndarray) -> linmap.BlockLinearMap:
    idx = G.node_index(x)
    half = G.order // 2
    cols = []
    for j in range(len(idx)):
        if idx[j] - half < 0 or idx[j] + half >= G.shape[j]:
            raise StencilError(f"node {idx} has no central stencil of order {G.order} along axis {j}")
        acc = np.zeros(G.values.shape[-1])
        for off, c in CENTRAL[G.order]:
            i2 = list(idx)
            i2[j] += off
            acc += c * G.values[tuple(i2)]
        cols.append(acc / G.spacing[j])
    return linmap.BlockLinearMap(np.stack(cols, axis=1), G.n, G.k)


def jacobian_fd_runs(F: CurveField, pts: np.ndarray, h: float) -> BlockRuns:
    """Central differences on run-encoded values; all stencil points must share runs and scales."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    base = F.value_runs(pts)
    cols = []
    for j in range(F.n):
        e = np.zeros(F.n)
        e[j] = h
        a, b = F.value_runs(pts + e), F.value_runs(pts - e)
        if not (np.array_equal(a.weights, b.weights) and np.array_equal(a.log2_scale, b.log2_scale)):
            raise StencilError("stencil crosses a run boundary or a scale change")
        cols.append((a.data - b.data) / (2 * h))
    data = np.stack(cols, axis=-1)
    scale = np.repeat(base.log2_scale[:, None], F.n, axis=1)
    return BlockRuns(data, base.weights.copy(), scale)


# ---------------------------------------------------------------------------
# distortion fields


@dataclass
class DistortionField:
    points: np.ndarray
    K: np.ndarray
    log2_K: np.ndarray
    log2_pullback: np.ndarray
    pullback: np.ndarray
    op_norm: np.ndarray
    dominating_index: np.ndarray
    constant: np.ndarray

    def summary(self) -> dict:
        hist: dict[int, int] = {}
        for i in self.dominating_index.tolist():
            hist[int(i)] = hist.get(int(i), 0) + 1
        imax = int(np.argmax(self.log2_K))
        return {"points": int(len(self.K)), "max_K": _jsonable(float(self.K.max())),
                "max_log2_K": _jsonable(float(self.log2_K.max())), "argmax_point": self.points[imax].tolist(),
                "min_pullback": float(self.pullback.min()),
                "min_log2_pullback": _jsonable(float(self.log2_pullback.min())),
                "constant_points": int(self.constant.sum()),
                "dominating_index_histogram": {str(k): v for k, v in sorted(hist.items())}}

    def to_csv(self) -> str:
        # linear pullback and op_norm underflow for strongly rescaled curves; log2_pullback does not
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.points.shape[1])]
                   + ["K", "log2_K", "pullback", "log2_pullback", "op_norm", "dominating_index"])
        for p, K, lk, pb, lpb, op, di in zip(self.points, self.K, self.log2_K, self.pullback, self.log2_pullback,
                                             self.op_norm, self.dominating_index):
            w.writerow([repr(float(v)) for v in p] + [repr(float(K)), repr(float(lk)), repr(float(pb)),
                                                      repr(float(lpb)), repr(float(op)), int(di)])
        return buf.getvalue()


def _jsonable(v: float):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def region_grid(region: Box, resolution) -> np.ndarray:
    res = [resolution] * region.dim if np.isscalar(resolution) else list(resolution)
    axes = [np.linspace(lo, hi, m) for lo, hi, m in zip(region.lower, region.upper, res)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, region.dim)


def distortion_field(F: CurveField, region=None, resolution=16, points: np.ndarray | None = None,
                     h: float = 1e-5, chunk: int = 200_000) -> DistortionField:
    """Per-point distortion with respect to vol^x, using the analytic differential when available."""
    pts = region_grid(region, resolution) if points is None else np.atleast_2d(points)
    parts = []
    for s in range(0, len(pts), chunk):
        sub = pts[s:s + chunk]
        if F.has_differential:
            runs = F.jacobian_runs(sub)
        else:
            mats = np.stack([jacobian_fd(F, p, h).matrix for p in sub])
            runs = BlockRuns.from_dense(mats, F.n)
        st = linmap.block_stats(runs.data, runs.weights, runs.log2_scale, runs.block_start)
        parts.append(st)
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return DistortionField(points=pts, K=cat("K"), log2_K=cat("log2_K"), log2_pullback=cat("log2_pullback"),
                           pullback=cat("pullback"), op_norm=cat("op_norm"),
                           dominating_index=cat("argmax_block"), constant=cat("constant"))


# ---------------------------------------------------------------------------
# Hölder exponent and Caccioppoli


def holder_exponent(K: float, omega: NForm) -> float:
    """alpha = ||omega|| / (K |omega|_l1)."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    norm = comass_closed_form(omega)
    if norm is None:
        norm = comass(omega).value
    return norm / (K * l1_norm(omega))


@dataclass(frozen=True)
class InequalityReport:
    lhs: float
    rhs: float
    params: dict = field(default_factory=dict)
    samples: int = 0
    tolerance: float = TOL

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.margin >= -self.tolerance

    def to_json_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "margin": self.margin, "holds": self.holds,
                "tolerance": self.tolerance, "samples": self.samples, "params": self.params}


def _report(lhs: float, rhs: float, params: dict, samples: int) -> InequalityReport:
    # absolute tolerance on the normalized quantities, expressed in the original units
    scale = max(abs(lhs), abs(rhs), 1.0)
    return InequalityReport(lhs=float(lhs), rhs=float(rhs), params=params, samples=samples, tolerance=TOL * scale)


def _abs_value(F: CurveField):
    return lambda p: np.linalg.norm(F(p), axis=1)


def _abs_increment(F: CurveField, a: np.ndarray):
    fa = F(a[None])[0]
    return lambda p: np.linalg.norm(F(p) - fa, axis=1)


@dataclass(frozen=True)
class CaccioppoliReport:
    energy: float
    diameter: float
    K: float
    ratio: float
    ratio_refined: float
    relative_change: float
    cells: int

    def to_json_dict(self) -> dict:
        return self.__dict__.copy()


def _ball_cells(center: np.ndarray, radius: float, m: int) -> tuple[np.ndarray, float]:
    g = (np.arange(m) + 0.5) / m * 2.0 - 1.0
    pts = np.stack(np.meshgrid(*[g] * len(center), indexing="ij"), axis=-1).reshape(-1, len(center))
    keep = np.einsum("ij,ij->i", pts, pts) <= 1.0
    return center + radius * pts[keep], (2.0 * radius / m) ** len(center)


def _energy(F: CurveField, center: np.ndarray, radius: float, m: int) -> tuple[float, int]:
    cells, vol = _ball_cells(center, 0.5 * radius, m)
    runs = F.jacobian_runs(cells)
    st = linmap.block_stats(runs.data, runs.weights, runs.log2_scale)
    return float((np.sum(st.op_norm ** F.n) * vol) ** (1.0 / F.n)), len(cells)


def image_diameter(F: CurveField, center, radius: float, level: int = 10, seed: int = 0) -> float:
    inner, _ = sampling.ball_points(len(center), level, seed)
    pts = np.concatenate([center + radius * inner, center + radius * sampling.sphere_points(len(center), level, seed)])
    vals = F(pts)
    # two-sweep farthest-point search from the centroid, repeated from each new extreme
    best = 0.0
    anchor = vals[np.argmax(np.linalg.norm(vals - vals.mean(0), axis=1))]
    for _ in range(3):
        d = np.linalg.norm(vals - anchor, axis=1)
        best = max(best, float(d.max()))
        anchor = vals[np.argmax(d)]
    return best


def caccioppoli_check(F: CurveField, center, radius: float, K: float | None = None, resolution: int = 24,
                      level: int = 10) -> CaccioppoliReport:
    """Empirical ratio (int_{B/2} ||DF||^n)^(1/n) / (K diam F(B)); a lower bound on the unknown C(n)."""
    center = np.asarray(center, dtype=float)
    e1, cells = _energy(F, center, radius, resolution)
    e2, _ = _energy(F, center, radius, 2 * resolution)
    diam = image_diameter(F, center, radius, level)
    if K is None:
        K = float(max(1.0, distortion_field(F, points=_ball_cells(center, radius, resolution)[0]).K.max()))
    denom = K * diam
    r1 = e1 / denom if denom > 0 else 0.0
    r2 = e2 / denom if denom > 0 else 0.0
    change = abs(r2 - r1) / r2 if r2 > 0 else 0.0
    return CaccioppoliReport(energy=e2, diameter=diam, K=K, ratio=r1, ratio_refined=r2, relative_change=change,
                             cells=cells)


# ---------------------------------------------------------------------------
# Harnack, growth, local distortion


def harnack_check(F: CurveField, center, radius: float, rho: float, level: int = 9, seed: int = 0) -> InequalityReport:
    """sup_{B/2} |F| <= 2^((4 - 4 rho) / rho) sup_{rho B} |F|; the gauge hypothesis is the caller's."""
    if not 0 < rho <= 0.5:
        raise ValueError(f"rho must lie in (0, 1/2], got {rho}")
    center = np.asarray(center, dtype=float)
    f = _abs_value(F)
    big = sampling.sup_ball(f, center, 0.5 * radius, level, seed)
    small = sampling.sup_ball(f, center, rho * radius, level, seed)
    factor = 2.0 ** ((4.0 - 4.0 * rho) / rho)
    return _report(big.value, factor * small.value,
                   {"center": center.tolist(), "radius": radius, "rho": rho, "factor": factor},
                   big.samples + small.samples)


def growth_check(F: CurveField, center, radius: float, tau: float = 0.0, level: int = 9,
                 seed: int = 0) -> InequalityReport:
    """sup_{4B/5} |F| <= 8 sup_{2B/5} |F| + 19 tau sup_B |F|."""
    center = np.asarray(center, dtype=float)
    f = _abs_value(F)
    lhs = sampling.sup_ball(f, center, 0.8 * radius, level, seed)
    mid = sampling.sup_ball(f, center, 0.4 * radius, level, seed)
    samples = lhs.samples + mid.samples
    rhs = 8.0 * mid.value
    if tau:
        whole = sampling.sup_ball(f, center, radius, level, seed)
        rhs += 19.0 * tau * whole.value
        samples += whole.samples
    return _report(lhs.value, rhs, {"center": center.tolist(), "radius": radius, "tau": tau}, samples)


def local_distortion_check(F: CurveField, center, radius: float, rho: float, delta: float = 0.0,
                           level: int = 9, seed: int = 0) -> InequalityReport:
    """sup_{rho B} |F - F(a)| <= ((1 + 2rho)/(1 - 2rho) + 2^(4/rho) delta) min_{|x-a| = rho r} |F - F(a)|."""
    if not 0 < rho <= 0.25:
        raise ValueError(f"rho must lie in (0, 1/4], got {rho}")
    center = np.asarray(center, dtype=float)
    f = _abs_increment(F, center)
    top = sampling.sup_ball(f, center, rho * radius, level, seed)
    low = sampling.inf_sphere(f, center, rho * radius, level, seed)
    factor = (1 + 2 * rho) / (1 - 2 * rho) + 2.0 ** (4.0 / rho) * delta
    return _report(top.value, factor * low.value,
                   {"center": center.tolist(), "radius": radius, "rho": rho, "delta": delta, "factor": factor},
                   top.samples + low.samples)


def metric_qc_ratio(F: CurveField, x, radii: Sequence[float], level: int = 9, seed: int = 0) -> list[tuple]:
    """(r, sup, inf, sup/inf) of |F(y) - F(x)| over spheres |y - x| = r."""
    x = np.asarray(x, dtype=float)
    f = _abs_increment(F, x)
    out = []
    for r in radii:
        sphere = x + r * sampling.sphere_points(len(x), level, seed)
        if not np.all(F.domain.contains(sphere)):
            raise DomainError(f"sphere of radius {r} around {x.tolist()} leaves the domain")
        top = sampling.sup_sphere(f, x, r, level, seed)
        low = sampling.inf_sphere(f, x, r, level, seed)
        out.append((float(r), top.value, low.value, top.value / low.value if low.value > 0 else math.inf))
    return out


# ---------------------------------------------------------------------------
# Rosay scan


def rosay_ratio_scan(n_values: Sequence[int], resolution: int = 400) -> list[tuple[int, float]]:
    """(n, sup over A_n of |d_zbar u| / |d_z u|) on a polar grid per annulus."""
    cells = 0.25 * (resolution - 1)
    if cells < 8:
        warnings.warn(f"cutoff transitions span {cells:.1f} grid cells (< 8); the scan is under-resolved",
                      RuntimeWarning, stacklevel=2)
    return [(int(n), rosay.annulus_sup_ratio(int(n), resolution)) for n in n_values]


def tail_ratio(rc: "rosay.RosayCurve", points: np.ndarray) -> np.ndarray:
    """Dilatation ratio of rosay_F at points outside B(a_n0), where F is holomorphic."""
    runs = rc.field.jacobian_runs(points)
    blocks = runs.data[:, :2]
    num = np.zeros(len(points))
    den = np.zeros(len(points))
    for i in range(2):
        m = blocks[:, i]
        a = 0.5 * np.hypot(m[:, 0, 0] + m[:, 1, 1], m[:, 1, 0] - m[:, 0, 1])
        b = 0.5 * np.hypot(m[:, 0, 0] - m[:, 1, 1], m[:, 1, 0] + m[:, 0, 1])
        num += b ** 2
        den += a ** 2
    return np.sqrt(num) / np.sqrt(den)
