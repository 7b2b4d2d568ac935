"""Möbius transformations y -> b + c A (y - p) / |y - p|^zeta, zeta in {0, 2}."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import Ball, CurveField, DomainError, Whole


@dataclass(frozen=True)
class MobiusMap:
    A: np.ndarray
    b: np.ndarray
    p: np.ndarray
    c: float
    zeta: int

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or np.abs(A.T @ A - np.eye(n)).max() > 1e-12:
            raise ValueError("A must be an orthogonal n x n matrix")
        if self.zeta not in (0, 2):
            raise ValueError(f"zeta must be 0 or 2, got {self.zeta}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float).reshape(n))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(n))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def orientation(self) -> int:
        """+1 if orientation preserving."""
        d = np.linalg.det(self.A)
        return int(np.sign(d)) * (-1 if self.zeta == 2 else 1)

    @classmethod
    def identity(cls, n: int) -> "MobiusMap":
        return cls(np.eye(n), np.zeros(n), np.zeros(n), 1.0, 0)

    def at_origin(self) -> np.ndarray:
        return mobius_eval(self, np.zeros(self.n))

    def derivative_norm_at_origin(self) -> float:
        """||D phi(0)|| = c / |p|^zeta."""
        return self.c / float(self.p @ self.p) ** (self.zeta // 2) if self.zeta else self.c

    def to_json_dict(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "p": self.p.tolist(), "c": self.c, "zeta": self.zeta}

    @classmethod
    def from_json_dict(cls, d: dict) -> "MobiusMap":
        return cls(np.array(d["A"]), np.array(d["b"]), np.array(d["p"]), float(d["c"]), int(d["zeta"]))


def _check_pole(M: MobiusMap, y: np.ndarray) -> np.ndarray:
    v = y - M.p
    r2 = np.einsum("...i,...i->...", v, v)
    if M.zeta == 2 and np.any(r2 == 0):
        raise DomainError("evaluation at the pole of a Möbius map")
    return r2


def mobius_eval(M: MobiusMap, y) -> np.ndarray:
    """phi(y). For zeta = 2 the increment from phi(0) is computed without cancellation."""
    y = np.asarray(y, dtype=float)
    if M.zeta == 0:
        return M.b + M.c * (y - M.p) @ M.A.T
    _check_pole(M, y)
    q = -M.p
    q2 = float(q @ q)
    if q2 == 0:
        v = y - M.p
        return M.b + M.c * (v / np.einsum("...i,...i->...", v, v)[..., None]) @ M.A.T
    phi0 = M.b + M.c * (q / q2) @ M.A.T
    return phi0 + M.c * mobius_increment(q, y) @ M.A.T


def mobius_increment(q: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(y+q)/|y+q|^2 - q/|q|^2 = (|q|^2 y - (|y|^2 + 2 y.q) q) / (|y+q|^2 |q|^2)."""
    q2 = float(q @ q)
    v = y + q
    v2 = np.einsum("...i,...i->...", v, v)
    yq = y @ q
    y2 = np.einsum("...i,...i->...", y, y)
    num = q2 * y - (y2 + 2.0 * yq)[..., None] * q
    return num / (v2 * q2)[..., None]


def mobius_derivative(M: MobiusMap, y) -> np.ndarray:
    """D phi(y) = c A (Id - 2 v v^T / |v|^2) / |v|^2 with v = y - p (zeta = 2); c A (zeta = 0)."""
    y = np.asarray(y, dtype=float)
    if M.zeta == 0:
        return np.broadcast_to(M.c * M.A, y.shape[:-1] + (M.n, M.n)).copy()
    r2 = _check_pole(M, y)
    v = y - M.p
    refl = np.eye(M.n) - 2.0 * v[..., :, None] * v[..., None, :] / r2[..., None, None]
    return M.c * (M.A @ refl) / r2[..., None, None]


def random_mobius(rng: np.random.Generator, n: int, pole_log10: tuple[float, float] = (-2.0, 1.0),
                  c_log10: tuple[float, float] = (-1.0, 1.0), orientation_preserving: bool = True,
                  zeta: int = 2) -> MobiusMap:
    """Random map with |p| = 1 + 10^U(pole_log10), so the pole lies outside the closed unit ball."""
    z = rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diag(r))
    want = -1.0 if (orientation_preserving and zeta == 2) else 1.0
    if orientation_preserving and np.sign(np.linalg.det(q)) != want:
        q[:, 0] *= -1.0
    direction = rng.normal(size=n)
    direction /= np.linalg.norm(direction)
    radius = 1.0 + 10.0 ** rng.uniform(*pole_log10)
    c = 10.0 ** rng.uniform(*c_log10)
    b = rng.normal(size=n)
    return MobiusMap(q, b, radius * direction, float(c), zeta)


def calibrated_mobius(p: np.ndarray, n: int = 3) -> MobiusMap:
    """Orientation-preserving inversion with ||D phi(0)|| = 1 and phi(0) = 0."""
    p = np.asarray(p, dtype=float)
    A = np.eye(n)
    A[0, 0] = -1.0
    c = float(p @ p)
    M0 = MobiusMap(A, np.zeros(n), p, c, 2)
    return MobiusMap(A, -M0.at_origin(), p, c, 2)


def mobius_component_curve(n: int, k: int, i0: int, M: MobiusMap, constants: np.ndarray | None = None,
                           domain=None) -> CurveField:
    """The curve with phi in block i0 (1-based) and constant blocks elsewhere."""
    if not 1 <= i0 <= k:
        raise ValueError(f"i0={i0} outside 1..{k}")
    if M.n != n:
        raise ValueError(f"Möbius map acts on R^{M.n}, expected R^{n}")
    const = np.zeros((k, n)) if constants is None else np.asarray(constants, dtype=float).reshape(k, n)
    if domain is None:
        domain = Ball(tuple(np.zeros(n)), float(np.linalg.norm(M.p)) * (1 - 1e-9)) if M.zeta == 2 else Whole(n)

    def evaluator(pts):
        out = np.broadcast_to(const.reshape(1, k * n), (len(pts), k * n)).copy()
        out[:, (i0 - 1) * n:i0 * n] = mobius_eval(M, pts)
        return out

    def differential(pts):
        out = np.zeros((len(pts), k * n, n))
        out[:, (i0 - 1) * n:i0 * n, :] = mobius_derivative(M, pts)
        return out

    return CurveField(name="mobius_component", n=n, k=k, domain=domain, evaluator=evaluator,
                      differential=differential, params={"i0": i0, "mobius": M.to_json_dict()})


def exact_sup_half_ball(M: MobiusMap) -> float:
    """sup over |y| <= 1/2 of |phi(y) - phi(0)|, in closed form."""
    if M.zeta == 0:
        return 0.5 * M.c
    d = float(np.linalg.norm(M.p))
    if d <= 0.5:
        return float("inf")
    return 0.5 * M.c / (d * (d - 0.5))
