"""Branched cover A: R^2 -> S^2 and the Zorich map (x, t) -> e^t A(x).

The unit square is mapped onto the upper hemisphere by stretching it radially
onto the disc and wrapping the disc over the hemisphere by polar angle. The map
is extended to R^2 by reflecting across the square's edges in the domain and
across the equator on the sphere, which gives period 2 in each variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .field import CurveField, Whole


class UnsupportedDimension(ValueError):
    pass


def _fold(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fold R^2 onto [0,1]^2: returns (u, orientation sign of each coordinate)."""
    y = np.mod(x, 2.0)
    flip = y > 1.0
    return np.where(flip, 2.0 - y, y), np.where(flip, -1.0, 1.0)


def _cell_map(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Square-to-hemisphere map on [0,1]^2 and its 3x2 differential."""
    z = 2.0 * u - 1.0
    az = np.abs(z)
    j = np.argmax(az, axis=1)
    rows = np.arange(len(z))
    m = az[rows, j]
    rho = np.linalg.norm(z, axis=1)
    centre = rho < 1e-300
    safe = np.where(centre, 1.0, rho)
    zhat = np.where(centre[:, None], np.array([1.0, 0.0]), z / safe[:, None])
    s, c = np.sin(0.5 * np.pi * m), np.cos(0.5 * np.pi * m)
    # sin(pi m / 2) / rho tends to (pi/2) m / rho, which is 1 along the axis used at the centre
    s_over_rho = np.where(centre, 0.5 * np.pi, s / safe)
    values = np.concatenate([s_over_rho[:, None] * np.where(centre[:, None], 0.0, z), c[:, None]], axis=1)
    grad_m = np.zeros_like(z)
    grad_m[rows, j] = np.sign(z[rows, j])
    grad_m[centre] = [1.0, 0.0]
    proj = np.eye(2)[None] - zhat[:, :, None] * zhat[:, None, :]
    top = (0.5 * np.pi * c)[:, None, None] * zhat[:, :, None] * grad_m[:, None, :] + s_over_rho[:, None, None] * proj
    bottom = -(0.5 * np.pi * s)[:, None] * grad_m
    jac = 2.0 * np.concatenate([top, bottom[:, None, :]], axis=1)
    return values, jac


def cover_values(x: np.ndarray) -> np.ndarray:
    return cover_values_and_jacobian(x)[0]


def cover_values_and_jacobian(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A(x) in S^2 and DA(x) (3x2) for points x of shape (N, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u, sign = _fold(x)
    vals, jac = _cell_map(u)
    hemi = sign[:, 0] * sign[:, 1]
    vals[:, 2] *= hemi
    jac = jac * sign[:, None, :]
    jac[:, 2, :] *= hemi[:, None]
    return vals, jac


def cover_seam_distance(x: np.ndarray) -> np.ndarray:
    """Distance to the fold lines, the cell diagonals and the cell centres."""
    x = np.atleast_2d(x)
    d_fold = np.abs(x - np.round(x)).min(axis=1)
    u, _ = _fold(x)
    a = np.abs(u - 0.5)
    d_diag = np.abs(a[:, 0] - a[:, 1]) / math.sqrt(2.0)
    d_centre = np.linalg.norm(u - 0.5, axis=1)
    return np.minimum(np.minimum(d_fold, d_diag), d_centre)


def cover_jacobian_det(x: np.ndarray) -> np.ndarray:
    """Oriented area factor det[d1 A, d2 A, A]."""
    vals, jac = cover_values_and_jacobian(x)
    return np.linalg.det(np.concatenate([jac, vals[:, :, None]], axis=2))


@dataclass(frozen=True)
class CoverConstants:
    lipschitz: float
    jacobian_min: float
    jacobian_max: float
    L: float
    grid: int


@lru_cache(maxsize=8)
def measure_cover(grid: int = 600) -> CoverConstants:
    """Empirical Lipschitz and Jacobian bounds on a cell-centred grid of one period cell.

    L combines both: the smallest L >= 1 with Lip <= L and J >= (1/L)^2.
    """
    g = (np.arange(grid) + 0.5) / grid
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    _, jac = cover_values_and_jacobian(pts)
    lip = float(np.linalg.svd(jac, compute_uv=False)[:, 0].max())
    det = cover_jacobian_det(pts)
    jmin, jmax = float(det.min()), float(det.max())
    L = max(lip, jmin ** -0.5 if jmin > 0 else math.inf, 1.0)
    return CoverConstants(lipschitz=lip, jacobian_min=jmin, jacobian_max=jmax, L=L, grid=grid)


def branched_cover_A(n: int = 3, grid: int = 600) -> CurveField:
    """A: R^(n-1) -> S^(n-1) as a CurveField with k = 1 (values in R^n)."""
    if n != 3:
        raise UnsupportedDimension(f"branched cover implemented for n = 3 only, got n = {n}")
    consts = measure_cover(grid)

    def evaluator(pts):
        return cover_values(pts)

    def differential(pts):
        return cover_values_and_jacobian(pts)[1]

    return CurveField(name="branched_cover_A", n=2, k=1, domain=Whole(2), evaluator=evaluator,
                      differential=differential, seam_distance=cover_seam_distance,
                      params={"target_dim": 3, "L_hat": consts.L, "lipschitz_hat": consts.lipschitz,
                              "J_hat": consts.jacobian_min, "J_max": consts.jacobian_max,
                              "measurement_grid": grid})


def zorich(n: int = 3, grid: int = 600) -> CurveField:
    """Z(x, t) = e^t A(x), R^3 -> R^3."""
    if n != 3:
        raise UnsupportedDimension(f"Zorich map implemented for n = 3 only, got n = {n}")
    consts = measure_cover(grid)

    def evaluator(pts):
        return np.exp(pts[:, 2])[:, None] * cover_values(pts[:, :2])

    def differential(pts):
        vals, jac = cover_values_and_jacobian(pts[:, :2])
        et = np.exp(pts[:, 2])[:, None, None]
        return et * np.concatenate([jac, vals[:, :, None]], axis=2)

    return CurveField(name="zorich", n=3, k=1, domain=Whole(3), evaluator=evaluator, differential=differential,
                      seam_distance=lambda p: cover_seam_distance(p[:, :2]),
                      params={"L_hat": consts.L, "measurement_grid": grid})
