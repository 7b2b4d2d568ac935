"""Deterministic sup/inf estimation over balls and spheres.

Sample clouds are prefixes of one scrambled Sobol sequence, so the cloud at
level m + 1 contains the cloud at level m. The best sample of every dyadic
prefix seeds a compass search, and the estimate is the best value over the
samples and all refined seeds. Raising the level therefore never lowers a sup
(or raises an inf).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

MIN_LEVEL = 4


@lru_cache(maxsize=64)
def _sobol(dim: int, level: int, seed: int) -> np.ndarray:
    pts = qmc.Sobol(dim, scramble=True, seed=seed).random_base2(level)
    pts.setflags(write=False)
    return pts


def cube_points(dim: int, level: int, seed: int = 0) -> np.ndarray:
    """First 2^level points of the scrambled Sobol sequence in [0, 1)^dim."""
    return _sobol(dim, level, seed)


def ball_points(dim: int, level: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Unit-ball points from the first 2^level cube points (rejection), with their prefix index."""
    u = 2.0 * cube_points(dim, level, seed) - 1.0
    keep = np.einsum("ij,ij->i", u, u) <= 1.0
    return u[keep], np.nonzero(keep)[0]


def sphere_points(dim: int, level: int, seed: int = 0) -> np.ndarray:
    """Unit-sphere points from the first 2^level cube points (Gaussian normalization)."""
    g = ndtri(np.clip(cube_points(dim, level, seed + 7919), 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True)
class Extremum:
    value: float
    point: np.ndarray
    samples: int
    level: int

    def to_json_dict(self) -> dict:
        return {"value": self.value, "point": self.point.tolist(), "samples": self.samples, "level": self.level}


def _project(x: np.ndarray, center: np.ndarray, radius: float, surface: bool) -> np.ndarray:
    d = x - center
    r = np.linalg.norm(d, axis=-1, keepdims=True)
    if surface:
        return center + radius * d / np.where(r > 0, r, 1.0)
    return center + d * np.minimum(1.0, radius / np.where(r > 0, r, 1.0))


def compass_search(func: Callable[[np.ndarray], np.ndarray], starts: np.ndarray, center: np.ndarray,
                   radius: float, surface: bool, sign: float, iterations: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Batched compass search maximizing sign * func from each start; returns (best values, points)."""
    x = starts.copy()
    val = sign * func(x)
    dim = x.shape[1]
    dirs = np.concatenate([np.eye(dim), -np.eye(dim)])
    step = np.full(len(x), radius / 4.0)
    evals = len(x)
    for _ in range(iterations):
        cand = _project(x[:, None, :] + step[:, None, None] * dirs[None], center, radius, surface)
        cv = sign * func(cand.reshape(-1, dim)).reshape(len(x), len(dirs))
        evals += cv.size
        j = np.argmax(cv, axis=1)
        best = cv[np.arange(len(x)), j]
        better = best > val
        x[better] = cand[better, j[better]]
        val = np.where(better, best, val)
        step = np.where(better, step, step * 0.5)
        if np.all(step < radius * 1e-12):
            break
    return sign * val, x


def extremum(func: Callable[[np.ndarray], np.ndarray], center, radius: float, level: int = 10,
             mode: str = "sup", surface: bool = False, seed: int = 0, refine: bool = True) -> Extremum:
    """Estimate sup (or inf) of func over the closed ball (or sphere) B(center, radius).

    func maps (N, dim) points to (N,) values. For a closed ball the cloud holds
    interior points and sphere points.
    """
    center = np.asarray(center, dtype=float)
    dim = center.shape[0]
    sign = 1.0 if mode == "sup" else -1.0
    if radius == 0:
        v = float(func(center[None])[0])
        return Extremum(v, center.copy(), 1, level)
    sph = sphere_points(dim, level, seed)
    if surface:
        pts, order = center + radius * sph, np.arange(len(sph))
    else:
        inner, idx = ball_points(dim, level, seed)
        pts = np.concatenate([center + radius * inner, center + radius * sph])
        order = np.concatenate([idx, np.arange(len(sph))])
    vals = sign * func(pts)
    best = int(np.argmax(vals))
    value, point = vals[best], pts[best]
    samples = len(pts)
    if refine:
        starts = []
        for j in range(min(MIN_LEVEL, level), level + 1):
            mask = order < 2 ** j
            if mask.any():
                cand = np.nonzero(mask)[0]
                starts.append(pts[cand[np.argmax(vals[cand])]])
        r_vals, r_pts = compass_search(func, np.array(starts), center, radius, surface, sign)
        r_vals = sign * r_vals
        samples += len(starts)
        i = int(np.argmax(r_vals))
        if r_vals[i] > value:
            value, point = r_vals[i], r_pts[i]
    return Extremum(float(sign * value), point, samples, level)


def sup_ball(func, center, radius, level=10, seed=0, refine=True) -> Extremum:
    return extremum(func, center, radius, level, "sup", False, seed, refine)


def inf_sphere(func, center, radius, level=10, seed=0, refine=True) -> Extremum:
    return extremum(func, center, radius, level, "inf", True, seed, refine)


def sup_sphere(func, center, radius, level=10, seed=0, refine=True) -> Extremum:
    return extremum(func, center, radius, level, "sup", True, seed, refine)
