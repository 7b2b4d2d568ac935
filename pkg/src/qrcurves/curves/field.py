"""Evaluable maps Omega -> (R^n)^k with optional analytic differentials.

Large constructions (k in the millions, or values far below the float range)
are represented by *runs*: per point, a short list of distinct blocks with
multiplicities, plus base-2 log scales. Small constructions use dense arrays;
both views are available on every CurveField.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DENSE_LIMIT = 50_000_000


class DomainError(ValueError):
    """Evaluation point outside the domain of a construction."""


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Box:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    kind: str = "box"

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= np.asarray(self.lower)) & (pts <= np.asarray(self.upper)), axis=1)

    def clearance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.minimum(pts - np.asarray(self.lower), np.asarray(self.upper) - pts).min(axis=1)


@dataclass(frozen=True)
class Ball:
    center: tuple[float, ...]
    radius: float
    kind: str = "ball"

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.clearance(pts) >= 0

    def clearance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return self.radius - np.linalg.norm(pts - np.asarray(self.center), axis=1)


@dataclass(frozen=True)
class Strip:
    """R^(dim-1) x [t_lo, t_hi]; the last coordinate is t."""

    dim: int
    t_lo: float
    t_hi: float
    kind: str = "strip"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(pts)[:, -1]
        return (t >= self.t_lo) & (t <= self.t_hi)

    def clearance(self, pts: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(pts)[:, -1]
        return np.minimum(t - self.t_lo, self.t_hi - t)


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float
    center: tuple[float, float] = (0.0, 0.0)
    kind: str = "annulus"
    dim: int = 2

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return self.clearance(pts) >= 0

    def clearance(self, pts: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(np.atleast_2d(pts) - np.asarray(self.center), axis=1)
        return np.minimum(r - self.r_in, self.r_out - r)


@dataclass(frozen=True)
class Whole:
    dim: int
    kind: str = "whole"

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return np.ones(len(np.atleast_2d(pts)), dtype=bool)

    def clearance(self, pts: np.ndarray) -> np.ndarray:
        return np.full(len(np.atleast_2d(pts)), np.inf)


def domain_to_json(dom) -> dict:
    d = {k: getattr(dom, k) for k in dom.__dataclass_fields__}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


# ---------------------------------------------------------------------------
# compressed block data


@dataclass
class BlockRuns:
    """Run-length compressed block data for a batch of N points.

    data: (N, R, n) for values or (N, R, n, n) for differentials.
    weights: (N, R) multiplicities (zero allowed).
    log2_scale: (N,) for values; (N, n) per-column for differentials.
    """

    data: np.ndarray
    weights: np.ndarray
    log2_scale: np.ndarray

    @property
    def is_jacobian(self) -> bool:
        return self.data.ndim == 4

    @property
    def k(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def block_start(self) -> np.ndarray:
        w = self.weights
        return (1 + np.concatenate([np.zeros((len(w), 1)), np.cumsum(w, axis=1)[:, :-1]], axis=1)).astype(np.int64)

    def scaled(self) -> np.ndarray:
        """Data multiplied by its scale (may underflow to 0 or overflow to inf)."""
        with np.errstate(over="ignore", under="ignore"):
            if self.is_jacobian:
                return self.data * np.exp2(self.log2_scale)[:, None, None, :]
            return self.data * np.exp2(self.log2_scale)[:, None, None]

    def dense(self) -> np.ndarray:
        """Expand to (N, nk) values or (N, nk, n) matrices."""
        w = self.weights.astype(np.int64)
        k = int(w[0].sum())
        if np.any(w.sum(axis=1) != k):
            raise ValueError("points have different block counts")
        n = self.data.shape[2]
        N = len(w)
        if N * k * n * (n if self.is_jacobian else 1) > DENSE_LIMIT:
            raise MemoryError(f"dense expansion of {N} points with k={k} exceeds {DENSE_LIMIT} entries")
        vals = self.scaled()
        out = np.stack([np.repeat(vals[i], w[i], axis=0) for i in range(N)])
        return out.reshape((N, k * n, n)) if self.is_jacobian else out.reshape(N, k * n)

    @classmethod
    def from_dense(cls, arr: np.ndarray, n: int) -> "BlockRuns":
        arr = np.asarray(arr, dtype=float)
        N = arr.shape[0]
        if arr.ndim == 3:
            data = arr.reshape(N, -1, n, n)
            scale = np.zeros((N, n))
        else:
            data = arr.reshape(N, -1, n)
            scale = np.zeros(N)
        return cls(data, np.ones(data.shape[:2]), scale)

    def block_norms_log2(self) -> np.ndarray:
        """log2 of the Euclidean norm of each distinct value block, (N, R)."""
        with np.errstate(divide="ignore"):
            return np.log2(np.linalg.norm(self.data, axis=2)) + self.log2_scale[:, None]

    def log2_norm(self) -> np.ndarray:
        """log2 |value| over all k blocks, per point."""
        sq = np.einsum("nr,nr->n", self.weights, np.sum(self.data ** 2, axis=2))
        with np.errstate(divide="ignore"):
            return 0.5 * np.log2(sq) + self.log2_scale


def runs_max_difference(a: BlockRuns, b: BlockRuns) -> np.ndarray:
    """Max over blocks of the absolute difference of two run-encoded values, per point."""
    va, vb = a.scaled(), b.scaled()
    sa, sb = np.cumsum(a.weights, axis=1), np.cumsum(b.weights, axis=1)
    out = np.zeros(len(va))
    for i in range(len(va)):
        cuts = np.union1d(sa[i], sb[i])
        lo = 0.0
        worst = 0.0
        for hi in cuts:
            if hi > lo:
                ia = int(np.searchsorted(sa[i], hi, side="left"))
                ib = int(np.searchsorted(sb[i], hi, side="left"))
                worst = max(worst, float(np.abs(va[i, ia] - vb[i, ib]).max()))
            lo = hi
        out[i] = worst
    return out


# ---------------------------------------------------------------------------
# curve fields


Evaluator = Callable[[np.ndarray], np.ndarray]
RunEvaluator = Callable[[np.ndarray], BlockRuns]


@dataclass(frozen=True)
class CurveField:
    """A map Omega -> (R^n)^k.

    Either dense callables (points (N, n) -> (N, nk) and (N, nk, n)) or run
    callables (points -> BlockRuns) must be given; the other view is derived.
    ``seam_distance`` returns the distance from each point to the nearest
    declared non-smooth locus, or None when the map is smooth.
    """

    name: str
    n: int
    k: int
    domain: object
    evaluator: Evaluator | None = None
    differential: Evaluator | None = None
    run_evaluator: RunEvaluator | None = None
    run_differential: RunEvaluator | None = None
    seam_distance: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    @property
    def has_differential(self) -> bool:
        return self.differential is not None or self.run_differential is not None

    def _points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.n:
            raise DomainError(f"{self.name}: points have dimension {pts.shape[1]}, expected {self.n}")
        bad = ~self.domain.contains(pts)
        if bad.any():
            raise DomainError(f"{self.name}: point {pts[np.argmax(bad)].tolist()} outside the domain")
        return pts, single

    def __call__(self, pts) -> np.ndarray:
        pts, single = self._points(pts)
        out = self.evaluator(pts) if self.evaluator is not None else self.run_evaluator(pts).dense()
        return out[0] if single else out

    def jacobian(self, pts) -> np.ndarray:
        if not self.has_differential:
            raise ValueError(f"{self.name} has no analytic differential")
        pts, single = self._points(pts)
        out = self.differential(pts) if self.differential is not None else self.run_differential(pts).dense()
        return out[0] if single else out

    def value_runs(self, pts) -> BlockRuns:
        pts, _ = self._points(pts)
        if self.run_evaluator is not None:
            return self.run_evaluator(pts)
        return BlockRuns.from_dense(self.evaluator(pts), self.n)

    def jacobian_runs(self, pts) -> BlockRuns:
        if not self.has_differential:
            raise ValueError(f"{self.name} has no analytic differential")
        pts, _ = self._points(pts)
        if self.run_differential is not None:
            return self.run_differential(pts)
        return BlockRuns.from_dense(self.differential(pts), self.n)

    def metadata(self) -> dict:
        return {"construction": self.name, "n": self.n, "k": self.k,
                "domain": domain_to_json(self.domain), "params": self.params}
