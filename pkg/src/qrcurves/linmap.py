"""Distortion analytics of block linear maps R^n -> (R^n)^k.

Block numbers in reports are 1-based (block 1 is the first n rows).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .exterior import NForm, is_vol_cross, pullback_eval


class PreconditionError(ValueError):
    """Input rejected because a hypothesis of the checked statement fails."""


@dataclass(frozen=True)
class BlockLinearMap:
    """A linear map R^n -> (R^n)^k stored as an (nk x n) matrix of k stacked square blocks."""

    matrix: np.ndarray
    n: int
    k: int

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.shape != (self.n * self.k, self.n):
            raise ValueError(f"matrix shape {mat.shape} != ({self.n * self.k}, {self.n})")
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def from_matrix(cls, matrix, n: int | None = None) -> "BlockLinearMap":
        mat = np.asarray(matrix, dtype=float)
        n = mat.shape[1] if n is None else n
        if mat.shape[0] % n:
            raise ValueError(f"{mat.shape[0]} rows is not a multiple of n={n}")
        return cls(mat, n, mat.shape[0] // n)

    @classmethod
    def from_blocks(cls, blocks: Sequence) -> "BlockLinearMap":
        arr = np.asarray(blocks, dtype=float)
        k, n, _ = arr.shape
        return cls(arr.reshape(k * n, n), n, k)

    @property
    def blocks(self) -> np.ndarray:
        return self.matrix.reshape(self.k, self.n, self.n)

    def block(self, i: int) -> np.ndarray:
        """Block number i (1-based)."""
        return self.blocks[i - 1]

    def __eq__(self, other):
        return (isinstance(other, BlockLinearMap) and self.n == other.n and self.k == other.k
                and np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash((self.n, self.k, self.matrix.tobytes()))


def as_block_map(L, n: int | None = None) -> BlockLinearMap:
    return L if isinstance(L, BlockLinearMap) else BlockLinearMap.from_matrix(L, n)


# ---------------------------------------------------------------------------
# batched statistics


@dataclass
class BlockStats:
    """Per-sample distortion statistics for a batch of (optionally compressed) block maps.

    A batch entry is a list of R distinct blocks with multiplicities, so a map with
    k = 10^6 blocks taking only three distinct values costs three blocks. Column j of
    every block is scaled by 2**log2_colscale[:, j]; logs keep tiny scales finite.
    """

    n: int
    log2_op_norm: np.ndarray
    log2_block_norms: np.ndarray
    block_dets: np.ndarray          # determinants of the unscaled blocks
    log2_det_scale: np.ndarray      # sum of column log-scales: true det = block_dets * 2**this
    det_sum: np.ndarray             # weighted sum of unscaled determinants
    weights: np.ndarray
    block_start: np.ndarray         # 1-based first block number of each distinct block

    @property
    def op_norm(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp2(self.log2_op_norm)

    @property
    def block_norms(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp2(self.log2_block_norms)

    @property
    def constant(self) -> np.ndarray:
        return np.isneginf(self.log2_op_norm)

    @property
    def pullback(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.det_sum * np.exp2(self.log2_det_scale)

    @property
    def log2_pullback(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.det_sum > 0, np.log2(np.where(self.det_sum > 0, self.det_sum, 1.0))
                            + self.log2_det_scale, -np.inf)

    @property
    def log2_K(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            out = self.n * self.log2_op_norm - self.log2_pullback
        out = np.where(self.det_sum > 0, out, np.inf)
        return np.where(self.constant, 0.0, out)

    @property
    def K(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp2(self.log2_K)

    @property
    def argmax_block(self) -> np.ndarray:
        """1-based number of the block with the largest norm (ties: lowest number); 0 if constant."""
        norms = np.where(self.weights > 0, self.log2_block_norms, -np.inf)
        # distinct blocks are listed in increasing block order, so argmax keeps the lowest number
        idx = np.argmax(norms, axis=1)
        out = np.take_along_axis(self.block_start, idx[:, None], axis=1)[:, 0]
        return np.where(self.constant, 0, out)


def block_stats(blocks: np.ndarray, weights: np.ndarray | None = None,
                log2_colscale: np.ndarray | None = None, block_start: np.ndarray | None = None) -> BlockStats:
    """Compute BlockStats for blocks of shape (N, R, n, n)."""
    blocks = np.ascontiguousarray(blocks, dtype=float)
    N, R, n, _ = blocks.shape
    w = np.ones((N, R)) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), (N, R))
    if block_start is None:
        starts = 1 + np.concatenate([np.zeros((N, 1)), np.cumsum(w, axis=1)[:, :-1]], axis=1)
        block_start = starts.astype(np.int64)
    c = np.zeros((N, n)) if log2_colscale is None else np.broadcast_to(np.asarray(log2_colscale, dtype=float), (N, n))
    cmax = c.max(axis=1)
    factors = np.exp2(c - cmax[:, None])
    gram_max, det_sum, block_gram_max, det = kernels.block_stats(blocks, np.ascontiguousarray(w),
                                                                np.ascontiguousarray(factors))
    with np.errstate(divide="ignore"):
        log2_op = cmax + 0.5 * np.log2(np.maximum(gram_max, 0.0))
        log2_bn = cmax[:, None] + 0.5 * np.log2(np.maximum(block_gram_max, 0.0))
    return BlockStats(n=n, log2_op_norm=log2_op, log2_block_norms=log2_bn, block_dets=det,
                      log2_det_scale=c.sum(axis=1), det_sum=det_sum, weights=np.asarray(w),
                      block_start=np.broadcast_to(block_start, (N, R)))


def matrices_to_blocks(mats: np.ndarray, n: int) -> np.ndarray:
    """(N, nk, n) stacked matrices -> (N, k, n, n) blocks."""
    mats = np.asarray(mats, dtype=float)
    return mats.reshape(mats.shape[0], mats.shape[1] // n, n, n)


# ---------------------------------------------------------------------------
# single-map analytics


@dataclass(frozen=True)
class DistortionReport:
    """Distortion of one block linear map with respect to a unit-comass form."""

    op_norm: float
    pullback: float
    K: float
    block_norms: tuple[float, ...]
    block_dets: tuple[float, ...]
    dominating_index: int | None = None
    bound_flags: dict | None = None
    constant: bool = False
    log2_K: float = 0.0
    argmax_block: int | None = None
    epsilon: float | None = None
    blocks_passing_a: tuple[int, ...] = ()
    normalized_pullback: float | None = None
    margins: dict | None = None

    def to_json_dict(self) -> dict:
        d = asdict(self)
        for key in ("K", "log2_K"):
            if math.isinf(d[key]):
                d[key] = "inf"
        d["block_norms"] = list(self.block_norms)
        d["block_dets"] = list(self.block_dets)
        d["blocks_passing_a"] = list(self.blocks_passing_a)
        return d


def op_norm(L) -> float:
    """Largest singular value, from the n x n Gram matrix."""
    mat = as_block_map(L).matrix
    return float(math.sqrt(max(kernels.sym_eigvals((mat.T @ mat)[None])[0, -1], 0.0)))


def singular_values(L) -> np.ndarray:
    """Ascending singular values sigma_1 <= ... <= sigma_n."""
    mat = as_block_map(L).matrix
    return np.sqrt(np.maximum(kernels.sym_eigvals((mat.T @ mat)[None])[0], 0.0))


def hs_norm(L) -> float:
    return float(np.linalg.norm(as_block_map(L).matrix))


def conformality_defect(block: np.ndarray) -> float:
    """sigma_max / sigma_min - 1 of a square block (inf if singular)."""
    s = np.sqrt(np.maximum(kernels.sym_eigvals((block.T @ block)[None])[0], 0.0))
    return float(s[-1] / s[0] - 1.0) if s[0] > 0 else math.inf


def distortion(L, omega: NForm | None = None) -> DistortionReport:
    """K = ||L||^n / (star L^* omega); +inf when the pullback is not positive; 1 for L = 0."""
    L = as_block_map(L)
    st = block_stats(L.blocks[None])
    vol = omega is None or is_vol_cross(omega) == (L.n, L.k)
    if vol:
        pullback = float(st.det_sum[0])
    else:
        if omega.m != L.n * L.k or omega.n != L.n:
            raise ValueError(f"form of degree {omega.n} on R^{omega.m} does not match map {L.n}x{L.n * L.k}")
        pullback = pullback_eval(omega, L)
    norm = float(st.op_norm[0])
    constant = bool(st.constant[0])
    if constant:
        K, log2K = 1.0, 0.0
    elif pullback > 0:
        log2K = L.n * math.log2(norm) - math.log2(pullback)
        K = 2.0 ** log2K if log2K < 1023 else math.inf
    else:
        K, log2K = math.inf, math.inf
    argmax = None if constant else int(st.argmax_block[0])
    return DistortionReport(op_norm=norm, pullback=pullback, K=K, block_norms=tuple(st.block_norms[0].tolist()),
                            block_dets=tuple(st.block_dets[0].tolist()), constant=constant, log2_K=log2K,
                            argmax_block=argmax)


# ---------------------------------------------------------------------------
# near-calibrated classification


TOL = 1e-9


@dataclass
class ClassifyBatch:
    """Vectorized classification results; flags are evaluated on maps normalized to ||L|| = 1."""

    K_normalized: np.ndarray
    accepted: np.ndarray
    i0: np.ndarray                 # 1-based
    flag_a: np.ndarray
    flag_b: np.ndarray
    flag_c: np.ndarray
    margin_a: np.ndarray
    margin_b: np.ndarray
    margin_c: np.ndarray
    passing_a: np.ndarray          # (N, k) bool
    stats: BlockStats


def check_epsilon(eps: float, k: int) -> None:
    if not 0 < eps < 1.0 / (100 * k):
        raise PreconditionError(f"epsilon={eps} outside (0, 1/(100k)) = (0, {1.0 / (100 * k):.6g})")


def classify_batch(mats: np.ndarray, n: int, eps: float) -> ClassifyBatch:
    """Classify a batch of maps (N, nk, n) after orientation normalization."""
    blocks = matrices_to_blocks(mats, n)
    k = blocks.shape[1]
    check_epsilon(eps, k)
    st = block_stats(blocks)
    absdet = np.abs(st.block_dets)
    norm = st.op_norm
    safe = np.where(norm > 0, norm, 1.0)
    bn = st.block_norms / safe[:, None]             # normalized block norms
    dn = absdet / safe[:, None] ** n                # normalized |det|
    pull = dn.sum(axis=1)
    with np.errstate(divide="ignore"):
        K = np.where(pull > 0, 1.0 / np.where(pull > 0, pull, 1.0), np.inf)
    K = np.where(norm > 0, K, np.inf)
    accepted = K <= 1.0 + eps
    i0 = np.argmax(bn, axis=1)
    rows = np.arange(len(i0))
    ca = 1.0 + 7.0 * k * math.sqrt(eps)
    lhs_a = bn ** n
    margin_all_a = ca * dn - lhs_a
    margin_a = margin_all_a[rows, i0]
    margin_b = bn[rows, i0] - 1.0 / (1.0 + eps)
    cc = 5.0 * math.sqrt(k) * eps ** 0.25
    others = bn.copy()
    others[rows, i0] = -np.inf
    margin_c = cc - others.max(axis=1) if k > 1 else np.full(len(i0), np.inf)
    return ClassifyBatch(K_normalized=K, accepted=accepted, i0=i0 + 1,
                         flag_a=margin_a >= -TOL, flag_b=margin_b >= -TOL, flag_c=margin_c >= -TOL,
                         margin_a=margin_a, margin_b=margin_b, margin_c=margin_c,
                         passing_a=margin_all_a >= -TOL, stats=st)


def classify_near_calibrated(L, eps: float) -> DistortionReport:
    """Dominating block i0 of a map with distortion <= 1 + eps and the three bound flags."""
    L = as_block_map(L)
    res = classify_batch(L.matrix[None], L.n, eps)
    if not res.accepted[0]:
        raise PreconditionError(
            f"distortion after orientation normalization is {res.K_normalized[0]:.9g} > 1 + eps = {1 + eps:.9g}")
    raw = distortion(L)
    flags = {"a": bool(res.flag_a[0]), "b": bool(res.flag_b[0]), "c": bool(res.flag_c[0])}
    margins = {"a": float(res.margin_a[0]), "b": float(res.margin_b[0]), "c": float(res.margin_c[0])}
    passing = tuple(int(i) + 1 for i in np.nonzero(res.passing_a[0])[0])
    return DistortionReport(op_norm=raw.op_norm, pullback=raw.pullback, K=raw.K, block_norms=raw.block_norms,
                            block_dets=raw.block_dets, dominating_index=int(res.i0[0]), bound_flags=flags,
                            constant=raw.constant, log2_K=raw.log2_K, argmax_block=raw.argmax_block,
                            epsilon=eps, blocks_passing_a=passing,
                            normalized_pullback=float(np.abs(raw.block_dets).sum()), margins=margins)


def orientation_normalize(L) -> BlockLinearMap:
    """Reflect the first row of every block with negative determinant."""
    L = as_block_map(L)
    blocks = L.blocks.copy()
    neg = kernels.dets(blocks) < 0
    blocks[neg, 0, :] *= -1.0
    return BlockLinearMap.from_blocks(blocks)


# ---------------------------------------------------------------------------
# random near-calibrated maps


def random_rotation(rng: np.random.Generator, n: int, size: int | None = None) -> np.ndarray:
    """Haar-distributed rotations in SO(n)."""
    count = 1 if size is None else size
    z = rng.normal(size=(count, n, n))
    q, r = np.linalg.qr(z)
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    neg = np.linalg.det(q) < 0
    q[neg, :, 0] *= -1.0
    return q[0] if size is None else q


def propose_near_calibrated(rng: np.random.Generator, n: int, k: int, eps: float, count: int) -> np.ndarray:
    """Candidate maps: a rotation in a random block plus perturbations spread over many scales."""
    blocks = np.zeros((count, k, n, n))
    i0 = rng.integers(0, k, size=count)
    q = random_rotation(rng, n, count)
    own = eps * 10.0 ** rng.uniform(-3.0, 0.3, size=count)
    off = math.sqrt(eps) * 10.0 ** rng.uniform(-3.0, 0.2, size=count)
    noise = rng.normal(size=(count, k, n, n)) / n
    scale = np.repeat(off[:, None], k, axis=1)
    scale[np.arange(count), i0] = own
    blocks += noise * scale[:, :, None, None]
    blocks[np.arange(count), i0] += q
    return blocks.reshape(count, k * n, n)


@dataclass(frozen=True)
class SamplerStats:
    attempts: int
    accepted: int

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


class SamplerExhausted(RuntimeError):
    pass


def sample_near_calibrated(rng: np.random.Generator, n: int, k: int, eps: float, count: int,
                           max_attempts: int | None = None) -> tuple[np.ndarray, SamplerStats]:
    """Draw `count` maps with raw distortion <= 1 + eps by rejection."""
    check_epsilon(eps, k)
    budget = max_attempts if max_attempts is not None else 200 * count + 1000
    out, attempts, have = [], 0, 0
    while have < count:
        if attempts >= budget:
            raise SamplerExhausted(f"accepted {have}/{count} maps after {attempts} attempts")
        batch = min(max(2 * (count - have), 64), budget - attempts)
        cand = propose_near_calibrated(rng, n, k, eps, batch)
        attempts += batch
        st = block_stats(matrices_to_blocks(cand, n))
        ok = np.nonzero(st.K <= 1.0 + eps)[0][: count - have]
        out.append(cand[ok])
        have += len(ok)
    return np.concatenate(out), SamplerStats(attempts=attempts, accepted=count)


def random_near_calibrated(n: int, k: int, eps: float, seed: int,
                           max_attempts: int = 100000) -> tuple[BlockLinearMap, SamplerStats]:
    rng = np.random.default_rng(seed)
    mats, stats = sample_near_calibrated(rng, n, k, eps, 1, max_attempts)
    return BlockLinearMap(mats[0], n, k), stats


# ---------------------------------------------------------------------------
# perturbation bound and complex dilatation


@dataclass(frozen=True)
class InequalityPair:
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.margin >= -TOL


def perturbation_preconditions(L: BlockLinearMap, R: BlockLinearMap, nu: float) -> list[str]:
    """Names of the failed hypotheses (empty if all hold)."""
    n = L.n
    failed = []
    if not 0 < nu < 2.0 ** (-n):
        failed.append(f"nu={nu} outside (0, 2^-n)")
    norm = op_norm(L)
    pull = float(kernels.dets(L.blocks).sum())
    if abs(pull - norm ** n) > 1e-9 * max(norm ** n, 1e-300):
        failed.append(f"L is not calibrated: pullback {pull:.12g} != ||L||^n {norm ** n:.12g}")
    cols = np.linalg.norm(R.matrix - L.matrix, axis=0)
    bound = nu * norm / math.sqrt(n)
    if np.any(cols > bound * (1 + 1e-12)):
        failed.append(f"column perturbation {cols.max():.6g} exceeds nu ||L|| / sqrt(n) = {bound:.6g}")
    return failed


def perturbation_bound_check(L, R, nu: float) -> dict:
    """Check ||R|| <= (1+nu)||L|| and K(R) <= (1+nu)^n / (1 - 2^n nu)."""
    L, R = as_block_map(L), as_block_map(R)
    failed = perturbation_preconditions(L, R, nu)
    if failed:
        raise PreconditionError("; ".join(failed))
    n = L.n
    nl, nr = op_norm(L), op_norm(R)
    rep = distortion(R)
    norm_pair = InequalityPair(nr / nl, 1.0 + nu)
    k_pair = InequalityPair(rep.K, (1.0 + nu) ** n / (1.0 - 2.0 ** n * nu))
    return {"norm": norm_pair, "distortion": k_pair, "holds": norm_pair.holds and k_pair.holds}


def perturbation_bound_value(n: int, nu: float) -> float:
    return (1.0 + nu) ** n / (1.0 - 2.0 ** n * nu)


def wirtinger_parts(block: np.ndarray) -> tuple[complex, complex]:
    """(d/dz, d/dzbar) of a real 2x2 block [[u_x, u_y], [v_x, v_y]]."""
    ux, uy, vx, vy = block[0, 0], block[0, 1], block[1, 0], block[1, 1]
    return complex(0.5 * (ux + vy), 0.5 * (vx - uy)), complex(0.5 * (ux - vy), 0.5 * (vx + uy))


def block_from_wirtinger(a: complex, b: complex) -> np.ndarray:
    """Real 2x2 block of h -> a h + b conj(h)."""
    s, d = a + b, a - b
    return np.array([[s.real, -d.imag], [s.imag, d.real]])


@dataclass(frozen=True)
class DilatationReport:
    dz: float
    dzbar: float
    ratio: float
    K: float
    premise: bool
    conclusion: InequalityPair
    minimal_premise_K: float
    converse_bound: float
    converse_holds: bool | None

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["conclusion"] = {"lhs": self.conclusion.lhs, "rhs": self.conclusion.rhs, "holds": self.conclusion.holds}
        return d


def complex_dilatation_check(L, K: float) -> DilatationReport:
    """Compare the dilatation premise |dF/dzbar| <= (K-1)/(K+1) |dF/dz| with ||L||^2 <= K star L^* omega_sym."""
    L = as_block_map(L)
    if L.n != 2:
        raise PreconditionError(f"complex dilatation needs n = 2, got n = {L.n}")
    if K < 1:
        raise PreconditionError(f"K={K} < 1")
    parts = [wirtinger_parts(b) for b in L.blocks]
    dz = math.sqrt(sum(abs(a) ** 2 for a, _ in parts))
    dzb = math.sqrt(sum(abs(b) ** 2 for _, b in parts))
    ratio = dzb / dz if dz > 0 else (0.0 if dzb == 0 else math.inf)
    premise = dzb <= (K - 1.0) / (K + 1.0) * dz + TOL * max(dz, 1.0)
    pull = float(kernels.dets(L.blocks).sum())
    norm = op_norm(L)
    scale = norm ** 2 if norm > 0 else 1.0
    conclusion = InequalityPair(norm ** 2 / scale, K * pull / scale)
    minimal = (dz + dzb) / (dz - dzb) if dz > dzb else math.inf
    converse = math.sqrt((2 * K - 1) / (2 * K + 1))
    converse_holds = bool(ratio <= converse + TOL) if conclusion.holds else None
    return DilatationReport(dz=dz, dzbar=dzb, ratio=ratio, K=K, premise=bool(premise), conclusion=conclusion,
                            minimal_premise_K=minimal, converse_bound=converse, converse_holds=converse_holds)
