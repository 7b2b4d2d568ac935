"""Constant-coefficient alternating n-forms on R^m and their comass."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from . import kernels


class FormError(ValueError):
    """Invalid form construction or dimension mismatch."""


class ComassConvergenceError(RuntimeError):
    """No restart of the comass optimizer met the stationarity tolerance."""

    def __init__(self, message: str, result: "ComassResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class NForm:
    """An alternating n-covector on R^m, stored by strictly increasing 1-based multi-indices."""

    n: int
    m: int
    terms: tuple[tuple[tuple[int, ...], float], ...] = ()

    def __post_init__(self):
        if self.n < 1 or self.m < self.n:
            raise FormError(f"need 1 <= n <= m, got n={self.n}, m={self.m}")
        seen = set()
        for idx, _ in self.terms:
            if len(idx) != self.n:
                raise FormError(f"multi-index {idx} does not have length {self.n}")
            if any(b <= a for a, b in zip(idx, idx[1:])):
                raise FormError(f"multi-index {idx} is not strictly increasing")
            if idx[0] < 1 or idx[-1] > self.m:
                raise FormError(f"multi-index {idx} out of range 1..{self.m}")
            if idx in seen:
                raise FormError(f"duplicate multi-index {idx}")
            seen.add(idx)

    @classmethod
    def from_terms(cls, n: int, m: int, terms: Mapping[tuple[int, ...], float] | Iterable) -> "NForm":
        """Build a form from (indices, coeff) pairs; unsorted indices are sorted with sign."""
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[tuple[int, ...], float] = {}
        for idx, coeff in items:
            idx = tuple(int(i) for i in idx)
            if len(set(idx)) != len(idx):
                continue
            order = sorted(range(len(idx)), key=lambda t: idx[t])
            sign = _permutation_sign(order)
            key = tuple(idx[t] for t in order)
            acc[key] = acc.get(key, 0.0) + sign * float(coeff)
        kept = tuple(sorted((k, v) for k, v in acc.items() if v != 0.0))
        return cls(n, m, kept)

    @property
    def indices(self) -> np.ndarray:
        """Zero-based index array of shape (terms, n)."""
        if not self.terms:
            return np.zeros((0, self.n), dtype=int)
        return np.array([idx for idx, _ in self.terms], dtype=int) - 1

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for _, c in self.terms], dtype=float)

    def to_json_dict(self) -> dict:
        return {"n": self.n, "m": self.m,
                "terms": [{"indices": list(idx), "coeff": c} for idx, c in self.terms]}

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "NForm":
        try:
            terms = [(tuple(t["indices"]), t["coeff"]) for t in data["terms"]]
            return cls.from_terms(int(data["n"]), int(data["m"]), terms)
        except (KeyError, TypeError) as exc:
            raise FormError(f"malformed form JSON: {exc}") from exc


@dataclass(frozen=True)
class Frame:
    """n vectors in R^m stored as the columns of an m x n matrix."""

    vectors: np.ndarray = field(repr=False)

    @property
    def gram(self) -> np.ndarray:
        return self.vectors.T @ self.vectors

    def conformality_defect(self) -> float:
        """Max deviation of the Gram matrix from a multiple of the identity, relative to that multiple."""
        return conformality_defect(self.vectors)


def conformality_defect(v: np.ndarray) -> float:
    g = np.asarray(v, dtype=float).T @ np.asarray(v, dtype=float)
    lam = np.trace(g) / g.shape[0]
    if lam == 0:
        return 0.0
    return float(np.abs(g / lam - np.eye(g.shape[0])).max())


def _permutation_sign(order: list[int]) -> int:
    sign, seen = 1, [False] * len(order)
    for start in range(len(order)):
        if seen[start]:
            continue
        length, j = 0, start
        while not seen[j]:
            seen[j] = True
            j = order[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def make_vol_cross(n: int, k: int) -> NForm:
    """Product volume form on (R^n)^k: the sum of the determinant forms of the k blocks."""
    if n < 1 or k < 1:
        raise FormError(f"make_vol_cross needs n >= 1 and k >= 1, got n={n}, k={k}")
    terms = tuple((tuple(range(i * n + 1, (i + 1) * n + 1)), 1.0) for i in range(k))
    return NForm(n, n * k, terms)


def volume_form(n: int) -> NForm:
    return make_vol_cross(n, 1)


def omega_sym(k: int) -> NForm:
    """Symplectic form of C^k in real coordinates (x1, y1, ..., xk, yk)."""
    return make_vol_cross(2, k)


def is_vol_cross(form: NForm) -> tuple[int, int] | None:
    """Return (n, k) if the form equals make_vol_cross(n, k), else None."""
    if form.m % form.n:
        return None
    k = form.m // form.n
    return (form.n, k) if form == make_vol_cross(form.n, k) else None


def l1_norm(form: NForm) -> float:
    return float(sum(abs(c) for _, c in form.terms))


def evaluate(form: NForm, frames: np.ndarray) -> np.ndarray | float:
    """Evaluate the form on frames given as m x n matrices (columns are the vectors).

    Accepts a single (m, n) frame or a batch (..., m, n).
    """
    v = np.asarray(frames, dtype=float)
    if v.ndim < 2 or v.shape[-2:] != (form.m, form.n):
        raise FormError(f"frame shape {v.shape[-2:]} does not match (m, n) = ({form.m}, {form.n})")
    batch = v.shape[:-2]
    flat = v.reshape((-1, form.m, form.n))
    out = np.zeros(flat.shape[0])
    for idx, coeff in zip(form.indices, form.coefficients):
        out += coeff * kernels.dets(flat[:, idx, :])
    out = out.reshape(batch)
    return float(out) if not batch else out


def pullback_eval(form: NForm, linear_map) -> float:
    """omega(L e_1, ..., L e_n) for an (m x n) matrix or a BlockLinearMap."""
    mat = getattr(linear_map, "matrix", linear_map)
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (form.m, form.n):
        raise FormError(f"map of shape {mat.shape} cannot be paired with a form on R^{form.m} of degree {form.n}")
    return float(evaluate(form, mat))


def _cofactors(sq: np.ndarray) -> np.ndarray:
    """Cofactor matrices of a batch (B, n, n): d det / d entry."""
    b, n, _ = sq.shape
    if n == 1:
        return np.ones_like(sq)
    cof = np.empty_like(sq)
    rows = np.arange(n)
    for r in range(n):
        keep_r = rows != r
        for c in range(n):
            minor = sq[:, keep_r][:, :, rows != c]
            cof[:, r, c] = (-1) ** (r + c) * kernels.dets(minor)
    return cof


def gradient(form: NForm, frames: np.ndarray) -> np.ndarray:
    """Gradient of evaluate(form, V) with respect to V for a batch (B, m, n)."""
    v = np.asarray(frames, dtype=float)
    g = np.zeros_like(v)
    for idx, coeff in zip(form.indices, form.coefficients):
        g[:, idx, :] += coeff * _cofactors(v[:, idx, :])
    return g


@dataclass(frozen=True)
class ComassResult:
    """Best value found by the comass optimizer with its frame and diagnostics."""

    value: float
    frame: Frame
    converged: bool
    stationarity: float
    restarts: int
    restarts_converged: int
    tolerance: float

    def to_json_dict(self) -> dict:
        return {"value": self.value, "frame": self.frame.vectors.tolist(), "converged": self.converged,
                "stationarity": self.stationarity, "restarts": self.restarts,
                "restarts_converged": self.restarts_converged, "tolerance": self.tolerance}


def _project_balls(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=-2, keepdims=True)
    return v / np.maximum(norms, 1.0)


def _stationarity(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    """KKT residual for maximizing over a product of unit balls, per batch entry."""
    norms = np.linalg.norm(v, axis=-2, keepdims=True)
    on_sphere = norms >= 1.0 - 1e-12
    radial = np.sum(g * v, axis=-2, keepdims=True)
    tangential = g - radial * v / np.where(on_sphere, norms ** 2, 1.0)
    # on the sphere an outward-pointing gradient is allowed; inward components are not
    resid = np.where(on_sphere, np.linalg.norm(tangential, axis=-2, keepdims=True)
                     + np.maximum(-radial, 0.0), np.linalg.norm(g, axis=-2, keepdims=True))
    return resid.max(axis=(-2, -1))


def comass(form: NForm, restarts: int = 32, iterations: int = 5000, seed: int = 0,
           tol: float = 1e-10, value_tol: float = 1e-6, strict: bool = True,
           max_step: float = 2.0) -> ComassResult:
    """Lower bound on the comass by projected gradient ascent over products of unit balls.

    All restarts run as one batch, each from a frame drawn by its own seeded
    generator. Step sizes are chosen by backtracking. Convergence means the
    KKT residual of the best restart fell below ``tol``.
    """
    if not form.terms:
        raise FormError("comass of the zero form is undefined for the optimizer")
    m, n = form.m, form.n
    starts = []
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        starts.append(_project_balls(rng.normal(size=(m, n)) / math.sqrt(m) * 2.0))
    v = np.stack(starts)
    val = evaluate(form, v)
    step = np.ones(restarts)
    resid = np.full(restarts, np.inf)
    for _ in range(iterations):
        g = gradient(form, v)
        resid = _stationarity(v, g)
        if np.all(resid < tol):
            break
        # backtracking on each restart independently
        trial_step = np.minimum(step * 2.0, max_step)
        accepted = np.zeros(restarts, dtype=bool)
        new_v, new_val = v.copy(), val.copy()
        for _bt in range(60):
            todo = ~accepted
            if not todo.any():
                break
            cand = _project_balls(v[todo] + trial_step[todo, None, None] * g[todo])
            cval = evaluate(form, cand)
            move = np.sum((cand - v[todo]) * g[todo], axis=(-2, -1))
            ok = cval >= val[todo] + 0.1 * move - 1e-15 * np.abs(val[todo])
            idx = np.nonzero(todo)[0]
            good = idx[ok]
            new_v[good], new_val[good] = cand[ok], cval[ok]
            accepted[good] = True
            trial_step[idx[~ok]] *= 0.5
        step = np.where(accepted, trial_step, step * 0.5)
        v, val = new_v, new_val
    else:
        g = gradient(form, v)
        resid = _stationarity(v, g)
    best = int(np.lexsort((np.arange(restarts), -val))[0])
    converged_mask = resid < tol
    result = ComassResult(value=float(val[best]), frame=Frame(v[best].copy()),
                          converged=bool(converged_mask[best]), stationarity=float(resid[best]),
                          restarts=restarts, restarts_converged=int(converged_mask.sum()),
                          tolerance=value_tol)
    if strict and not result.converged:
        raise ComassConvergenceError(
            f"comass optimizer did not converge: best stationarity {result.stationarity:.3e} > {tol:.1e} "
            f"after {iterations} iterations and {restarts} restarts", result)
    return result


def comass_closed_form(form: NForm) -> float | None:
    """Exact comass where known: 1 for vol^x with n >= 2, sqrt(k) for n = 1."""
    nk = is_vol_cross(form)
    if nk is None:
        return None
    n, k = nk
    return math.sqrt(k) if n == 1 else 1.0


def all_multi_indices(n: int, m: int) -> list[tuple[int, ...]]:
    return [tuple(i + 1 for i in c) for c in combinations(range(m), n)]
