"""Dyadic cube meshes, simplicial subdivision and piecewise-affine interpolation of curves."""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from . import linmap, sampling
from .curves.field import Box, CurveField, DomainError
from .curves.mobius import MobiusMap, exact_sup_half_ball, mobius_derivative, mobius_eval

SCHEMES = ("barycentric", "kuhn")
DEGENERACY = 1e-14


class MeshError(ValueError):
    """Invalid mesh request or degenerate simplex."""


# ---------------------------------------------------------------------------
# cubes and subdivision


def dyadic_cubes(E: Box, j: int) -> np.ndarray:
    """Integer anchors v of the closed cubes 2^-j (v + [0,1]^n) that meet the closed box E."""
    if j < 0:
        raise MeshError(f"level must be non-negative, got {j}")
    lo, hi = np.asarray(E.lower, dtype=float), np.asarray(E.upper, dtype=float)
    if np.any(hi < lo):
        raise MeshError("box has upper < lower")
    s = 2.0 ** j
    first = np.ceil(lo * s).astype(np.int64) - 1
    last = np.floor(hi * s).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(first, last)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))


def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64)


def _signs(n: int) -> np.ndarray:
    return np.array(list(itertools.product((1, -1), repeat=n)), dtype=np.int64)


def _cell_templates(n: int, scheme: str) -> np.ndarray:
    """Vertices of every simplex of the cube [0,2]^n in half-step units, (T, n+1, n)."""
    perms = _permutations(n)
    eye = np.eye(n, dtype=np.int64)
    out = []
    if scheme == "barycentric":
        # flag simplex: cube barycenter, then barycenters of faces fixing sigma(1), sigma(2), ... at side s
        for s in _signs(n):
            for p in perms:
                verts = [np.ones(n, dtype=np.int64)]
                for m in range(n):
                    verts.append(verts[-1] + s[p[m]] * eye[p[m]])
                out.append(verts)
    elif scheme == "kuhn":
        for p in perms:
            verts = [np.zeros(n, dtype=np.int64)]
            for m in range(n):
                verts.append(verts[-1] + 2 * eye[p[m]])
            out.append(verts)
    else:
        raise MeshError(f"unknown subdivision scheme {scheme!r}; expected one of {SCHEMES}")
    return np.array(out, dtype=np.int64)


@dataclass
class DyadicMesh:
    """Simplicial subdivision of a set of level-j dyadic cubes.

    Vertex coordinates are stored exactly as integers in units of 2^-(j+1).
    """

    level: int
    anchors: np.ndarray          # (C, n) cube anchors
    scheme: str
    vertices_int: np.ndarray     # (V, n)
    simplices: np.ndarray        # (S, n+1) vertex ids; simplex s lies in cube s // per_cube

    @property
    def n(self) -> int:
        return self.anchors.shape[1]

    @property
    def unit(self) -> float:
        return 2.0 ** -(self.level + 1)

    @property
    def vertices(self) -> np.ndarray:
        return self.vertices_int * self.unit

    @property
    def per_cube(self) -> int:
        n = self.n
        return math.factorial(n) * (2 ** n if self.scheme == "barycentric" else 1)

    @property
    def simplex_vertices(self) -> np.ndarray:
        return self.vertices[self.simplices]

    def volumes(self) -> np.ndarray:
        sv = self.simplex_vertices
        edges = sv[:, 1:] - sv[:, :1]
        return np.abs(np.linalg.det(edges)) / math.factorial(self.n)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """(P, 2) pairs of simplex ids sharing an (n-1)-face, smaller id first."""
        S, m = self.simplices.shape
        faces = np.concatenate([np.delete(self.simplices, i, axis=1) for i in range(m)])
        owner = np.tile(np.arange(S), m)
        faces = np.sort(faces, axis=1)
        _, inv, counts = np.unique(faces, axis=0, return_inverse=True, return_counts=True)
        inv = inv.reshape(-1)
        shared = counts[inv] == 2
        order = np.argsort(inv[shared], kind="stable")
        pairs = np.sort(owner[shared][order].reshape(-1, 2), axis=1)
        return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]

    def shared_face(self, a: int, b: int) -> np.ndarray:
        return np.intersect1d(self.simplices[a], self.simplices[b])

    @cached_property
    def _cube_lookup(self):
        lo = self.anchors.min(axis=0)
        shape = self.anchors.max(axis=0) - lo + 1
        table = np.full(tuple(shape), -1, dtype=np.int64)
        table[tuple((self.anchors - lo).T)] = np.arange(len(self.anchors))
        return lo, table

    @cached_property
    def _template_lookup(self) -> np.ndarray:
        n = self.n
        code = np.full(n ** n * (2 ** n), -1, dtype=np.int64)
        perms = _permutations(n)
        weights = n ** np.arange(n)[::-1]
        if self.scheme == "barycentric":
            signs = _signs(n)
            bits = 2 ** np.arange(n)[::-1]
            for si, s in enumerate(signs):
                sc = int(((s < 0) * bits).sum())
                for pi, p in enumerate(perms):
                    code[sc * n ** n + int(p @ weights)] = si * len(perms) + pi
        else:
            for pi, p in enumerate(perms):
                code[int(p @ weights)] = pi
        return code

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Simplex id containing each point (ties broken toward the lower cube and first simplex)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = self.n
        s = 2.0 ** self.level
        y = x * s
        anchor = np.floor(y).astype(np.int64)
        lo, table = self._cube_lookup
        idx = anchor - lo
        # points on an upper face of the covered region belong to the cube below
        for d in range(n):
            top = idx[:, d] == table.shape[d]
            idx[top, d] -= 1
            anchor[top, d] -= 1
        if np.any(idx < 0) or np.any(idx >= np.array(table.shape)):
            raise DomainError("point outside the meshed region")
        cube = table[tuple(idx.T)]
        if np.any(cube < 0):
            raise DomainError("point outside the meshed cubes")
        local = y - anchor
        weights = n ** np.arange(n)[::-1]
        if self.scheme == "kuhn":
            perm = np.argsort(-local, axis=1, kind="stable")
            t = self._template_lookup[perm @ weights]
        else:
            z = 2.0 * local - 1.0
            neg = z < 0
            bits = 2 ** np.arange(n)[::-1]
            perm = np.argsort(-np.abs(z), axis=1, kind="stable")
            t = self._template_lookup[(neg @ bits) * n ** n + perm @ weights]
        return cube * self.per_cube + t

    def to_json_dict(self) -> dict:
        return {"level": self.level, "scheme": self.scheme, "n": self.n,
                "vertices": self.vertices.tolist(), "simplices": self.simplices.tolist(),
                "adjacency": self.adjacency.tolist()}


def subdivide(cubes: np.ndarray, scheme: str = "barycentric", level: int = 0) -> DyadicMesh:
    """Subdivide level-j cubes (integer anchors) into simplices with shared vertices."""
    if scheme not in SCHEMES:
        raise MeshError(f"unknown subdivision scheme {scheme!r}; expected one of {SCHEMES}")
    anchors = np.atleast_2d(np.asarray(cubes, dtype=np.int64))
    n = anchors.shape[1]
    tmpl = _cell_templates(n, scheme)
    allv = (2 * anchors[:, None, None, :] + tmpl[None]).reshape(-1, n)
    verts, inv = np.unique(allv, axis=0, return_inverse=True)
    simplices = inv.reshape(-1, n + 1)
    mesh = DyadicMesh(level=level, anchors=anchors, scheme=scheme, vertices_int=verts, simplices=simplices)
    vol = mesh.volumes()
    if np.any(vol < DEGENERACY * 2.0 ** (-level * n)):
        raise MeshError(f"degenerate simplex {int(np.argmin(vol))}")
    return mesh


def dyadic_mesh(E: Box, j: int, scheme: str = "barycentric") -> DyadicMesh:
    return subdivide(dyadic_cubes(E, j), scheme, j)


# ---------------------------------------------------------------------------
# piecewise-affine curves


@dataclass
class PLCurve:
    mesh: DyadicMesh
    values: np.ndarray            # (V, nk)
    n: int
    k: int
    linear: np.ndarray = field(repr=False, default=None)   # (S, nk, n)
    offset: np.ndarray = field(repr=False, default=None)   # (S, nk) value at the first vertex

    def __post_init__(self):
        if self.linear is None:
            self.linear, self.offset = _affine_parts(self.mesh, self.values)

    def linear_map(self, s: int) -> linmap.BlockLinearMap:
        return linmap.BlockLinearMap(self.linear[s], self.n, self.k)

    def evaluate(self, x, simplex: np.ndarray | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = self.mesh.locate(x) if simplex is None else np.asarray(simplex)
        base = self.mesh.vertices[self.mesh.simplices[s, 0]]
        return self.offset[s] + np.einsum("sij,sj->si", self.linear[s], x - base)

    __call__ = evaluate

    def to_json_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "level": self.mesh.level, "scheme": self.mesh.scheme,
                "vertices": self.mesh.vertices.tolist(), "values": self.values.tolist()}


def _affine_parts(mesh: DyadicMesh, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sv = mesh.simplex_vertices
    edges = sv[:, 1:] - sv[:, :1]                       # (S, n, n), rows are edge vectors
    vals = values[mesh.simplices]                       # (S, n+1, nk)
    dv = vals[:, 1:] - vals[:, :1]                      # (S, n, nk)
    # edges @ D^T = dv, solved by LU with partial pivoting
    lin = np.linalg.solve(edges, dv).transpose(0, 2, 1)
    return lin, vals[:, 0]


def pl_interpolant(F: CurveField, mesh: DyadicMesh) -> PLCurve:
    """Piecewise-affine map agreeing with F at every mesh vertex."""
    verts = mesh.vertices
    inside = F.domain.contains(verts)
    if not inside.all():
        raise DomainError(f"mesh vertex {verts[np.argmin(inside)].tolist()} outside the domain of {F.name}")
    return PLCurve(mesh=mesh, values=F(verts), n=F.n, k=F.k)


@dataclass(frozen=True)
class ApproximationError:
    value: float
    point: np.ndarray
    samples: int

    def to_json_dict(self) -> dict:
        return {"value": self.value, "point": self.point.tolist(), "samples": self.samples}


def approximation_error(F: CurveField, pl: PLCurve, region: Box, level: int = 14, seed: int = 0) -> ApproximationError:
    """sup |F - F_hat| over the first 2^level scrambled Sobol points of the region, plus its corners."""
    lo, hi = np.asarray(region.lower, dtype=float), np.asarray(region.upper, dtype=float)
    pts = lo + (hi - lo) * sampling.cube_points(len(lo), level, seed)
    err = np.linalg.norm(F(pts) - pl(pts), axis=1)
    i = int(np.argmax(err))
    return ApproximationError(float(err[i]), pts[i], len(pts))


# ---------------------------------------------------------------------------
# distortion and dominating index


def epsilon_threshold(k: int) -> float:
    """Largest eps with (1+eps)(1+7k sqrt(eps)) < 3/2, 5 sqrt(k) eps^(1/4) < 1/2 and eps < 1/(100k)."""
    f = lambda e: (1 + e) * (1 + 7 * k * math.sqrt(e)) - 1.5
    e1 = brentq(f, 1e-16, 1.0, xtol=1e-18, rtol=1e-15)
    e2 = (0.5 / (5.0 * math.sqrt(k))) ** 4
    # strict inequalities: step below the binding root until all three hold in floating point
    e = float(np.nextafter(min(e1, e2, 1.0 / (100 * k)), 0.0))
    while f(e) >= 0 or 5 * math.sqrt(k) * e ** 0.25 >= 0.5 or e >= 1.0 / (100 * k):
        e = float(np.nextafter(e, 0.0))
    return e


@dataclass
class MeshDistortion:
    K: np.ndarray
    log2_K: np.ndarray
    dominating_index: np.ndarray
    block_norms: np.ndarray
    op_norm: np.ndarray
    adjacent_same_fraction: float

    def summary(self) -> dict:
        idx, counts = np.unique(self.dominating_index, return_counts=True)
        return {"simplices": int(len(self.K)), "max_K": float(self.K.max()),
                "argmax_simplex": int(np.argmax(self.K)),
                "dominating_index_histogram": {str(int(i)): int(c) for i, c in zip(idx, counts)},
                "adjacent_same_index_fraction": self.adjacent_same_fraction}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.block_norms.shape[1]
        w.writerow(["simplex", "K", "op_norm", "dominating_index"] + [f"block_norm_{i + 1}" for i in range(k)])
        for s in range(len(self.K)):
            w.writerow([s, repr(float(self.K[s])), repr(float(self.op_norm[s])), int(self.dominating_index[s])]
                       + [repr(float(v)) for v in self.block_norms[s]])
        return buf.getvalue()


def pl_distortion_report(pl: PLCurve) -> MeshDistortion:
    st = linmap.block_stats(linmap.matrices_to_blocks(pl.linear, pl.n))
    dom = st.argmax_block
    pairs = pl.mesh.adjacency
    same = float(np.mean(dom[pairs[:, 0]] == dom[pairs[:, 1]])) if len(pairs) else 1.0
    return MeshDistortion(K=st.K, log2_K=st.log2_K, dominating_index=dom, block_norms=st.block_norms,
                          op_norm=st.op_norm, adjacent_same_fraction=same)


@dataclass
class ConsistencyReport:
    epsilon: float
    simplices: int
    pairs: int
    precondition_failures: list            # [(simplex id, reason)]
    inconsistent_pairs: list               # [(a, b, i_a, i_b)]
    flag_failures: list                    # [(simplex id, flag)]

    @property
    def consistent(self) -> bool:
        return not self.precondition_failures and not self.inconsistent_pairs and not self.flag_failures

    def to_json_dict(self) -> dict:
        return {"epsilon": self.epsilon, "simplices": self.simplices, "pairs": self.pairs,
                "consistent": self.consistent, "precondition_failures": self.precondition_failures,
                "inconsistent_pairs": self.inconsistent_pairs, "flag_failures": self.flag_failures}


def adjacent_index_consistency(pl: PLCurve, eps: float | None = None) -> ConsistencyReport:
    """Check that face-adjacent simplices share the dominating block, with the per-simplex norm bounds.

    Simplices violating the hypotheses (constant, or distortion above 1 + eps) are
    reported as precondition failures and excluded from the pair scan.
    """
    eps = epsilon_threshold(pl.k) if eps is None else float(eps)
    if eps > epsilon_threshold(pl.k):
        raise linmap.PreconditionError(f"epsilon={eps} above the configured threshold {epsilon_threshold(pl.k):.6g}")
    cb = linmap.classify_batch(pl.linear, pl.n, eps)
    failures = []
    constant = cb.stats.constant
    for s in np.nonzero(constant)[0]:
        failures.append((int(s), "constant linear part"))
    for s in np.nonzero(~constant & ~cb.accepted)[0]:
        failures.append((int(s), f"distortion {cb.K_normalized[s]:.6g} > 1 + eps"))
    ok = cb.accepted & ~constant
    flags = []
    for name, arr in (("b", cb.flag_b), ("c", cb.flag_c)):
        for s in np.nonzero(ok & ~arr)[0]:
            flags.append((int(s), name))
    pairs = pl.mesh.adjacency
    both = ok[pairs[:, 0]] & ok[pairs[:, 1]] if len(pairs) else np.zeros(0, dtype=bool)
    bad = both & (cb.i0[pairs[:, 0]] != cb.i0[pairs[:, 1]]) if len(pairs) else both
    inconsistent = [(int(a), int(b), int(cb.i0[a]), int(cb.i0[b])) for a, b in pairs[bad]]
    return ConsistencyReport(epsilon=eps, simplices=len(pl.linear), pairs=int(both.sum()),
                             precondition_failures=failures, inconsistent_pairs=inconsistent, flag_failures=flags)


# ---------------------------------------------------------------------------
# simplex geometry and model checks


def corner_simplex_check(mesh: DyadicMesh) -> dict:
    """Fraction of simplices with a vertex v0 such that the others are v0 +- 2^-(j+1) e_sigma(i)."""
    sv = mesh.vertices_int[mesh.simplices]          # (S, n+1, n), half-step units
    n = mesh.n
    passing = np.zeros(len(sv), dtype=bool)
    for i0 in range(n + 1):
        others = np.delete(sv, i0, axis=1) - sv[:, i0:i0 + 1]
        unit = (np.abs(others).sum(axis=2) == 1)      # each offset is +- one half-step along one axis
        axes = np.argmax(np.abs(others), axis=2)
        distinct = np.array([len(set(a)) == n for a in axes])
        passing |= unit.all(axis=1) & distinct
    return {"scheme": mesh.scheme, "n": n, "simplices": int(len(sv)), "passing": int(passing.sum()),
            "fraction": float(passing.mean())}


@dataclass(frozen=True)
class SimplexModelReport:
    t0: float
    K: float
    normalized_norm: float
    simplex_sup: float
    ball_sup: float
    norm_holds: bool
    sup_holds: bool

    def to_json_dict(self) -> dict:
        return self.__dict__.copy()


def simplex_model_check(F: CurveField, t0: float, base, scale: float = 1.0, level: int = 10,
                        seed: int = 0) -> SimplexModelReport:
    """Affine P through F at base + scale * {0, e_1, ..., e_n}, with its norm and sup bounds (constant 12)."""
    if not 0 < t0 < 0.5:
        raise ValueError(f"t0 must lie in (0, 1/2), got {t0}")
    base = np.asarray(base, dtype=float)
    n = F.n
    if F.domain.clearance(base[None])[0] < 2.0 * scale / t0:
        raise DomainError(f"B(base, {2.0 * scale / t0:g}) is not inside the domain of {F.name}")
    G = lambda x: F(base + scale * x)
    corners = np.vstack([np.zeros(n), np.eye(n)])
    vals = G(corners)
    P = (vals[1:] - vals[0]).T                       # linear part in normalized coordinates
    K = float(linmap.distortion(linmap.BlockLinearMap(P, n, F.k)).K)
    g0 = vals[0]
    m = sampling.sup_ball(lambda x: np.linalg.norm(G(x) - g0, axis=1), np.zeros(n), 1.0 / t0, level, seed).value
    norm = linmap.op_norm(linmap.BlockLinearMap(P, n, F.k))
    normalized = norm / (m * t0) if m > 0 else 0.0
    # |P(0) - P(x)| is convex in x, so its sup over the simplex sits at a vertex
    simplex_sup = float(np.linalg.norm(P, axis=0).max())
    return SimplexModelReport(t0=t0, K=K, normalized_norm=normalized, simplex_sup=simplex_sup, ball_sup=m,
                              norm_holds=normalized <= 12.0 + linmap.TOL,
                              sup_holds=simplex_sup <= 12.0 * t0 * m + linmap.TOL * max(1.0, m))


@dataclass(frozen=True)
class MobiusBoundsReport:
    derivative_norm: float
    sup_half_ball: float
    exact_sup: float
    lower_holds: bool
    upper_holds: bool
    second_order_constant: float

    @property
    def holds(self) -> bool:
        return self.lower_holds and self.upper_holds

    def to_json_dict(self) -> dict:
        d = self.__dict__.copy()
        d["holds"] = self.holds
        return d


def mobius_bounds_check(M: MobiusMap, level: int = 10, seed: int = 0) -> MobiusBoundsReport:
    """(1/3)|Dphi(0)| <= sup_{B(1/2)} |phi - phi(0)| <= |Dphi(0)| and the empirical second-order constant."""
    n = M.n
    if M.zeta == 2 and float(np.linalg.norm(M.p)) <= 1.0:
        raise DomainError("pole inside the closed unit ball")
    d0 = M.derivative_norm_at_origin()
    phi0 = mobius_eval(M, np.zeros(n))
    D0 = mobius_derivative(M, np.zeros(n))
    inc = lambda x: np.linalg.norm(mobius_eval(M, x) - phi0, axis=1)
    top = sampling.sup_ball(inc, np.zeros(n), 0.5, level, seed).value
    exact = exact_sup_half_ball(M)

    def second(x):
        r2 = np.einsum("ij,ij->i", x, x)
        err = np.linalg.norm(mobius_eval(M, x) - phi0 - x @ D0.T, axis=1)
        return np.where(r2 > 0, err / (d0 * np.where(r2 > 0, r2, 1.0)), 0.0)

    c2 = sampling.sup_ball(second, np.zeros(n), 0.5, level, seed).value
    tol = linmap.TOL * max(1.0, d0)
    lower = min(top, exact) >= d0 / 3.0 - tol
    upper = max(top, exact) <= d0 + tol
    return MobiusBoundsReport(derivative_norm=d0, sup_half_ball=top, exact_sup=exact, lower_holds=bool(lower),
                              upper_holds=bool(upper), second_order_constant=c2)
