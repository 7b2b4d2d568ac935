"""Brute-force oracles and seeded randomized suites for the linear-algebra and curve statements.

The checks here compute determinants and comass values with their own routines, so agreement
with the main path is evidence rather than a tautology. Every suite splits its trials
into fixed-size chunks; chunk c draws from SeedSequence(seed, spawn_key=(c,)), so the
result does not depend on the number of workers or on scheduling order.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linmap, numdiff, plmesh
from .curves.field import BlockRuns, CurveField
from .curves.mobius import mobius_component_curve, random_mobius
from .exterior import NForm

TOL = 1e-9
SUITES = ("prop81", "lemma82", "lemma32", "mobius", "battery")


class CostGuardError(ValueError):
    """Brute-force request too large."""


class ConfigError(ValueError):
    """Suite configuration outside the hypotheses of the statement it tests."""


# ---------------------------------------------------------------------------
# independent primitives


def _perm_sign(p: tuple[int, ...]) -> int:
    inv = sum(1 for i in range(len(p)) for j in range(i + 1, len(p)) if p[i] > p[j])
    return -1 if inv % 2 else 1


def leibniz_det(mats: np.ndarray) -> np.ndarray:
    """Determinants of (..., n, n) matrices by the permutation expansion (n <= 5)."""
    n = mats.shape[-1]
    if n > 5:
        raise CostGuardError(f"permutation expansion is limited to n <= 5, got {n}")
    out = np.zeros(mats.shape[:-2])
    for p in itertools.permutations(range(n)):
        term = np.full(mats.shape[:-2], float(_perm_sign(p)))
        for i in range(n):
            term = term * mats[..., i, p[i]]
        out += term
    return out


def svd_norm(mats: np.ndarray) -> np.ndarray:
    return np.linalg.svd(mats, compute_uv=False)[..., 0]


# ---------------------------------------------------------------------------
# brute-force comass

MAX_GRID = 4_000_000


def sphere_grid(m: int, resolution: int) -> np.ndarray:
    """Projected cube-face lattice on the half sphere (faces x_f = +1); nested under doubling."""
    g = -1.0 + 2.0 * np.arange(resolution + 1) / resolution
    rest = np.stack(np.meshgrid(*[g] * (m - 1), indexing="ij"), axis=-1).reshape(-1, m - 1)
    v = np.concatenate([np.insert(rest, f, 1.0, axis=1) for f in range(m)])
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _contract(form: NForm, v: np.ndarray) -> np.ndarray:
    """omega(v, ., ..., .) as a dense (N, m, ..., m) array of its remaining n - 1 slots."""
    n, m = form.n, form.m
    out = np.zeros((len(v),) + (m,) * (n - 1))
    for idx, c in form.terms:
        z = [i - 1 for i in idx]
        for p in itertools.permutations(range(n)):
            s = _perm_sign(p)
            rest = tuple(z[q] for q in p[1:])
            out[(slice(None),) + rest] += s * c * v[:, z[p[0]]]
    return out


def brute_force_comass(form: NForm, resolution: int = 8) -> float:
    """Lower bound on the comass by exhaustive search over a grid for the first vector.

    The remaining vectors are optimized exactly: for n = 2 the best second vector is
    the normalized contraction, and for n = 3 the best pair is the top singular pair
    of the contracted antisymmetric matrix. The objective is even in the first vector,
    so a half sphere suffices.
    """
    n, m = form.n, form.m
    if n > 3 or m > 6:
        raise CostGuardError(f"brute force is limited to n <= 3 and m <= 6, got n={n}, m={m}")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    size = m * (resolution + 1) ** (m - 1)
    if size > MAX_GRID:
        raise CostGuardError(f"grid of {size} points exceeds the limit {MAX_GRID}")
    v = sphere_grid(m, resolution)
    best = 0.0
    for s in range(0, len(v), 200_000):
        c = _contract(form, v[s:s + 200_000])
        if n == 1:
            f = np.abs(c)
        elif n == 2:
            f = np.linalg.norm(c, axis=1)
        else:
            f = np.linalg.svd(c, compute_uv=False)[:, 0]
        best = max(best, float(f.max()))
    return best


# ---------------------------------------------------------------------------
# suite plumbing


@dataclass
class SuiteConfig:
    suite: str
    n: int = 3
    k: int = 2
    eps: float = 1e-3
    nu: tuple = (0.01, 0.05, 0.1)
    K: tuple = (1.1, 2.0, 5.0)
    trials: int = 10_000
    seed: int = 0
    chunk: int = 10_000
    tolerance: float = TOL
    level: int = 9

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}; expected one of {SUITES}")
        if self.trials < 1 or self.chunk < 1:
            raise ConfigError("trials and chunk must be positive")
        self.nu = tuple(float(x) for x in np.atleast_1d(self.nu))
        self.K = tuple(float(x) for x in np.atleast_1d(self.K))
        if self.suite == "prop81":
            if self.n < 3:
                raise ConfigError(f"prop81 needs n >= 3, got {self.n}")
            if not 0 < self.eps < 1.0 / (100 * self.k):
                raise ConfigError(f"eps={self.eps} outside (0, 1/(100k)) = (0, {1.0 / (100 * self.k):.6g})")
        if self.suite == "lemma82":
            bad = [v for v in self.nu if not 0 < v < 2.0 ** -self.n]
            if self.n < 2 or bad:
                raise ConfigError(f"lemma82 needs n >= 2 and nu in (0, 2^-n); got n={self.n}, nu={bad}")
        if self.suite == "lemma32" and any(v < 1 for v in self.K):
            raise ConfigError("lemma32 needs K >= 1")
        if self.suite in ("mobius", "battery") and self.n < 2:
            raise ConfigError("Möbius suites need n >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["nu"], d["K"] = list(self.nu), list(self.K)
        return d

    @property
    def chunks(self) -> list[tuple[int, int]]:
        """(chunk index, trial count) pairs."""
        full, rest = divmod(self.trials, self.chunk)
        out = [(c, self.chunk) for c in range(full)]
        if rest:
            out.append((full, rest))
        return out


@dataclass
class Violation:
    chunk: int
    index: int
    check: str
    margin: float
    params: dict = field(default_factory=dict)


@dataclass
class ChunkResult:
    trials: int = 0
    violations: list = field(default_factory=list)
    sampling_failures: int = 0
    disagreements: int = 0
    stats: dict = field(default_factory=dict)


@dataclass
class SuiteResult:
    config: SuiteConfig
    trials: int
    violations: list
    sampling_failures: int
    disagreements: int
    stats: dict
    runtime: float = 0.0

    @property
    def violation_count(self) -> int:
        return len(self.violations)

    @property
    def worst_margin(self) -> float | None:
        return min((v.margin for v in self.violations), default=None)

    def to_json_dict(self, include_runtime: bool = False) -> dict:
        d = {"suite": self.config.suite, "config": self.config.to_json_dict(), "trials": self.trials,
             "violations": {"count": self.violation_count, "worst_margin": self.worst_margin,
                            "first": [asdict(v) for v in self.violations[:20]]},
             "sampling_failures": self.sampling_failures, "main_path_disagreements": self.disagreements,
             "stats": self.stats}
        if include_runtime:
            d["runtime_seconds"] = self.runtime
        return d

    def violations_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "chunk", "index", "check", "margin", "params"])
        for v in self.violations:
            w.writerow([self.config.seed, v.chunk, v.index, v.check, repr(float(v.margin)),
                        ";".join(f"{key}={val}" for key, val in sorted(v.params.items()))])
        return buf.getvalue()


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chunk,)))


def _merge_stats(parts: list[dict]) -> dict:
    out: dict = {}
    for p in parts:
        for key, val in p.items():
            if key.startswith("max_"):
                out[key] = max(out.get(key, -math.inf), val)
            elif key.startswith("min_"):
                out[key] = min(out.get(key, math.inf), val)
            else:
                out[key] = out.get(key, 0) + val
    return out


def _run_chunk(args) -> ChunkResult:
    cfg_dict, chunk, count = args
    cfg = SuiteConfig.from_dict(cfg_dict)
    return CHUNK_RUNNERS[cfg.suite](cfg, chunk, count)


def run_suite(cfg: SuiteConfig, workers: int = 1) -> SuiteResult:
    """Run every chunk (optionally in a process pool) and reduce in chunk order."""
    start = time.perf_counter()
    jobs = [(cfg.to_json_dict(), c, m) for c, m in cfg.chunks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    violations = [v for p in parts for v in p.violations]
    return SuiteResult(config=cfg, trials=sum(p.trials for p in parts), violations=violations,
                       sampling_failures=sum(p.sampling_failures for p in parts),
                       disagreements=sum(p.disagreements for p in parts),
                       stats=_merge_stats([p.stats for p in parts]), runtime=time.perf_counter() - start)


# ---------------------------------------------------------------------------
# prop81: near-calibrated linear maps have a dominating block


def independent_prop81(mats: np.ndarray, n: int, k: int, eps: float) -> dict:
    """The three conclusions from SVD norms and permutation determinants, normalized to ||L|| = 1."""
    blocks = mats.reshape(len(mats), k, n, n)
    norm = svd_norm(mats)
    bn = svd_norm(blocks) / norm[:, None]
    # reflected blocks: the orientation normalization replaces det by |det|
    dn = np.abs(leibniz_det(blocks)) / norm[:, None] ** n
    i0 = np.argmax(bn, axis=1)
    rows = np.arange(len(mats))
    a = (1 + 7 * k * math.sqrt(eps)) * dn[rows, i0] - bn[rows, i0] ** n
    b = bn[rows, i0] - 1 / (1 + eps)
    others = bn.copy()
    others[rows, i0] = -np.inf
    c = 5 * math.sqrt(k) * eps ** 0.25 - others.max(axis=1) if k > 1 else np.full(len(mats), np.inf)
    return {"i0": i0 + 1, "a": a, "b": b, "c": c, "hypothesis": 1.0 / dn.sum(axis=1)}


def _prop81_chunk(cfg: SuiteConfig, chunk: int, count: int) -> ChunkResult:
    rng = chunk_rng(cfg.seed, chunk)
    res = ChunkResult()
    try:
        mats, sst = linmap.sample_near_calibrated(rng, cfg.n, cfg.k, cfg.eps, count)
    except linmap.SamplerExhausted:
        res.sampling_failures = count
        return res
    main = linmap.classify_batch(mats, cfg.n, cfg.eps)
    ind = independent_prop81(mats, cfg.n, cfg.k, cfg.eps)
    held = ind["hypothesis"] <= 1 + cfg.eps + cfg.tolerance
    for name in ("a", "b", "c"):
        for i in np.nonzero(held & (ind[name] < -cfg.tolerance))[0]:
            res.violations.append(Violation(chunk, int(i), name, float(ind[name][i])))
    agree = (main.i0 == ind["i0"]) & (main.flag_a == (ind["a"] >= -cfg.tolerance))
    res.trials = count
    res.disagreements = int((~agree).sum())
    res.stats = {"attempts": sst.attempts, "min_margin_a": float(ind["a"].min()),
                 "min_margin_b": float(ind["b"].min()), "min_margin_c": float(ind["c"].min()),
                 "max_K": float(ind["hypothesis"].max())}
    return res


# ---------------------------------------------------------------------------
# lemma82: perturbing the columns of a calibrated map


def _calibrated_maps(rng: np.random.Generator, n: int, k: int, count: int) -> np.ndarray:
    mats = np.zeros((count, k * n, n))
    i0 = rng.integers(0, k, size=count)
    q = linmap.random_rotation(rng, n, count)
    scale = 10.0 ** rng.uniform(-2, 2, size=count)
    for t in range(count):
        mats[t, i0[t] * n:(i0[t] + 1) * n] = scale[t] * q[t]
    return mats


def _lemma82_chunk(cfg: SuiteConfig, chunk: int, count: int) -> ChunkResult:
    rng = chunk_rng(cfg.seed, chunk)
    n, k = cfg.n, cfg.k
    res = ChunkResult(trials=count * len(cfg.nu))
    stats = {}
    for nu in cfg.nu:
        L = _calibrated_maps(rng, n, k, count)
        normL = svd_norm(L)
        d = rng.normal(size=(count, k * n, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        # column lengths: a third exactly at the bound, the rest spread below it
        frac = np.where(rng.random((count, 1, n)) < 1 / 3, 1.0, rng.random((count, 1, n)) ** 0.25)
        R = L + d * frac * (nu * normL / math.sqrt(n))[:, None, None]
        blocks = R.reshape(count, k, n, n)
        normR = svd_norm(R)
        pull = leibniz_det(blocks).sum(axis=1)
        norm_margin = (1 + nu) - normR / normL
        bound = (1 + nu) ** n / (1 - 2 ** n * nu)
        # ||R||^n <= bound * pullback, normalized by ||R||^n
        k_margin = bound * pull / normR ** n - 1.0
        for name, marg in (("norm", norm_margin), ("distortion", k_margin)):
            for i in np.nonzero(marg < -cfg.tolerance)[0]:
                res.violations.append(Violation(chunk, int(i), name, float(marg[i]), {"nu": nu}))
        # main path on a subsample
        for i in range(0, count, max(1, count // 20)):
            chk = linmap.perturbation_bound_check(linmap.BlockLinearMap(L[i], n, k),
                                                  linmap.BlockLinearMap(R[i], n, k), nu)
            if chk["holds"] != bool(norm_margin[i] >= -cfg.tolerance and k_margin[i] >= -cfg.tolerance):
                res.disagreements += 1
        stats[f"min_norm_margin_nu{nu}"] = float(norm_margin.min())
        stats[f"min_distortion_margin_nu{nu}"] = float(k_margin.min())
    res.stats = stats
    return res


# ---------------------------------------------------------------------------
# lemma32: complex dilatation premise implies the distortion bound


def _lemma32_chunk(cfg: SuiteConfig, chunk: int, count: int) -> ChunkResult:
    rng = chunk_rng(cfg.seed, chunk)
    k = cfg.k
    res = ChunkResult(trials=count * len(cfg.K))
    stats = {}
    for K in cfg.K:
        a = rng.normal(size=(count, k)) + 1j * rng.normal(size=(count, k))
        b = rng.normal(size=(count, k)) + 1j * rng.normal(size=(count, k))
        mu = (K - 1) / (K + 1)
        frac = np.where(rng.random(count) < 0.25, 1.0, rng.random(count))
        b *= (frac * mu * np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1))[:, None]
        # block i of x + iy -> a_i h + b_i conj(h)
        s, d = a + b, a - b
        blocks = np.stack([np.stack([s.real, -d.imag], -1), np.stack([s.imag, d.real], -1)], -2)
        mats = blocks.reshape(count, 2 * k, 2)
        norm = svd_norm(mats)
        pull = leibniz_det(blocks).sum(axis=1)
        marg = K * pull / norm ** 2 - 1.0
        for i in np.nonzero(marg < -cfg.tolerance)[0]:
            res.violations.append(Violation(chunk, int(i), "conclusion", float(marg[i]), {"K": K}))
        for i in range(0, count, max(1, count // 20)):
            rep = linmap.complex_dilatation_check(linmap.BlockLinearMap(mats[i], 2, k), K)
            if not rep.premise or rep.conclusion.holds != bool(marg[i] >= -cfg.tolerance):
                res.disagreements += 1
        stats[f"min_margin_K{K}"] = float(marg.min())
    res.stats = stats
    return res


# ---------------------------------------------------------------------------
# mobius: the (1/3, 1) sandwich and the second-order constant


def _mobius_chunk(cfg: SuiteConfig, chunk: int, count: int) -> ChunkResult:
    rng = chunk_rng(cfg.seed, chunk)
    res = ChunkResult(trials=count)
    worst_c = 0.0
    for i in range(count):
        M = random_mobius(rng, cfg.n)
        rep = plmesh.mobius_bounds_check(M, level=cfg.level, seed=0)
        d0 = rep.derivative_norm
        low = min(rep.sup_half_ball, rep.exact_sup) / d0 - 1 / 3
        high = 1.0 - max(rep.sup_half_ball, rep.exact_sup) / d0
        for name, marg in (("lower", low), ("upper", high)):
            if marg < -cfg.tolerance:
                res.violations.append(Violation(chunk, i, name, float(marg), {"pole": float(np.linalg.norm(M.p))}))
        worst_c = max(worst_c, rep.second_order_constant)
    res.stats = {"max_second_order_constant": worst_c}
    return res


# ---------------------------------------------------------------------------
# battery: Harnack and growth checks on calibrated curves


def random_calibrated_triple(rng: np.random.Generator, n: int, k: int):
    """(Möbius component curve, ball center, radius, rho) with the ball inside the unit ball."""
    M = random_mobius(rng, n)
    i0 = int(rng.integers(1, k + 1))
    const = rng.normal(size=(k, n)) * 10.0 ** rng.uniform(-2, 0)
    const[i0 - 1] = 0.0
    F = mobius_component_curve(n, k, i0, M, const)
    d = rng.normal(size=n)
    center = d / np.linalg.norm(d) * 0.5 * rng.random() ** (1 / n)
    radius = (1.0 - np.linalg.norm(center)) * rng.uniform(0.2, 1.0)
    rho = 0.25 if rng.random() < 0.25 else float(10.0 ** rng.uniform(math.log10(0.05), math.log10(0.25)))
    return F, center, float(radius), rho


def _battery_chunk(cfg: SuiteConfig, chunk: int, count: int) -> ChunkResult:
    rng = chunk_rng(cfg.seed, chunk)
    res = ChunkResult(trials=count)
    growth_ratio = 0.0
    local_ratio = 0.0
    for i in range(count):
        F, c, r, rho = random_calibrated_triple(rng, cfg.n, cfg.k)
        checks = {"harnack": numdiff.harnack_check(F, c, r, rho, cfg.level),
                  "growth": numdiff.growth_check(F, c, r, 0.0, cfg.level),
                  "local_distortion": numdiff.local_distortion_check(F, c, r, rho, 0.0, cfg.level)}
        for name, rep in checks.items():
            if not rep.holds:
                res.violations.append(Violation(chunk, i, name, rep.margin, {"rho": rho, "radius": r}))
        g = checks["growth"]
        growth_ratio = max(growth_ratio, 8.0 * g.lhs / g.rhs if g.rhs > 0 else 0.0)
        ld = checks["local_distortion"]
        local_ratio = max(local_ratio, (ld.lhs / ld.rhs) if ld.rhs > 0 else 0.0)
    res.stats = {"max_growth_ratio": growth_ratio, "max_local_distortion_fraction": local_ratio}
    return res


CHUNK_RUNNERS = {"prop81": _prop81_chunk, "lemma82": _lemma82_chunk, "lemma32": _lemma32_chunk,
                 "mobius": _mobius_chunk, "battery": _battery_chunk}


def _expect(cfg: SuiteConfig, suite: str) -> SuiteConfig:
    if cfg.suite != suite:
        raise ConfigError(f"config is for suite {cfg.suite!r}, not {suite!r}")
    return cfg


def prop81_suite(cfg: SuiteConfig, workers: int = 1) -> SuiteResult:
    return run_suite(_expect(cfg, "prop81"), workers)


def lemma82_suite(cfg: SuiteConfig, workers: int = 1) -> SuiteResult:
    return run_suite(_expect(cfg, "lemma82"), workers)


def lemma32_suite(cfg: SuiteConfig, workers: int = 1) -> SuiteResult:
    return run_suite(_expect(cfg, "lemma32"), workers)


def mobius_suite(cfg: SuiteConfig, workers: int = 1) -> SuiteResult:
    return run_suite(_expect(cfg, "mobius"), workers)


# ---------------------------------------------------------------------------
# Liouville witness


@dataclass
class LiouvilleReport:
    passes: bool
    findings: list
    active_blocks: list
    max_conformality_defect: float
    points: int

    def to_json_dict(self) -> dict:
        return asdict(self)


def liouville_witness(F: CurveField, points: np.ndarray, tol: float = 1e-6) -> LiouvilleReport:
    """Check that a sampled curve has one non-constant block, with a conformal differential."""
    runs: BlockRuns = F.jacobian_runs(points)
    cmax = runs.log2_scale.max(axis=1)
    # column scales relative to the largest one keep the blocks finite
    data = runs.data * np.exp2(runs.log2_scale - cmax[:, None])[:, None, None, :]
    norms = svd_norm(data)                                         # (N, R)
    log2 = np.log2(np.where(norms > 0, norms, 1.0)) + cmax[:, None]
    log2 = np.where(norms > 0, log2, -np.inf)
    top = log2.max(axis=1, keepdims=True)
    active = (log2 > top + math.log2(tol)) & (runs.weights > 0)
    counts = (active * runs.weights).sum(axis=1)
    findings = []
    if np.any(counts > 1):
        findings.append(f"multiple active blocks: up to {int(counts.max())} at one point")
    starts = runs.block_start
    idx = sorted({int(s) for s in starts[active]})
    if len(idx) > 1 and not findings:
        findings.append(f"active block changes across points: {idx[:10]}")
    defect = 0.0
    one = counts == 1
    if one.any():
        sel = np.argmax(active[one], axis=1)
        blocks = data[one][np.arange(one.sum()), sel]
        sv = np.linalg.svd(blocks, compute_uv=False)
        defect = float((sv[:, 0] / sv[:, -1] - 1.0).max()) if np.all(sv[:, -1] > 0) else math.inf
        if defect > tol:
            findings.append(f"active block not conformal: defect {defect:.3g}")
    return LiouvilleReport(passes=not findings, findings=findings, active_blocks=idx[:100],
                           max_conformality_defect=defect, points=int(len(points)))
