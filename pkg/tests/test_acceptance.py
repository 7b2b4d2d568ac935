"""Acceptance criteria, one test (and one printed pass/fail line) per criterion."""
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from qrcurves import linmap, numdiff, plmesh, verify
from qrcurves.curves import (Box, calibrated_mobius, ivv_choose_k, ivv_F, ivv_H, measure_cover,
                             mobius_component_curve, rosay_F)
from qrcurves.curves.rosay import zero_points
from qrcurves.exterior import comass, comass_closed_form, make_vol_cross, omega_sym
from qrcurves.manifest import dumps

pytestmark = pytest.mark.slow


def test_criterion_01_comass_closed_forms(criterion):
    start = time.perf_counter()
    worst = 0.0
    brute_worst = 0.0
    brute_cases = []
    cases = [((n, k), 1.0) for n, k in [(2, 2), (2, 3), (3, 2), (3, 3)]]
    cases += [((1, k), math.sqrt(k)) for k in (2, 3, 4, 5)]
    for (n, k), expected in cases:
        form = make_vol_cross(n, k)
        worst = max(worst, abs(comass(form).value - expected), abs(comass_closed_form(form) - expected))
        try:
            brute = verify.brute_force_comass(form)
        except verify.CostGuardError:
            continue
        brute_cases.append((n, k))
        brute_worst = max(brute_worst, abs(brute - expected))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and brute_worst <= 1e-3 and elapsed < 30
    criterion(1, ok, f"max |comass - closed form| = {worst:.2e}; brute force on {len(brute_cases)} cases within "
                     f"{brute_worst:.2e}; {elapsed:.1f} s")


def test_criterion_02_rigidity_at_5(criterion):
    # z -> (z, z + zbar): blocks Id and [[2, 0], [0, 0]]
    L = linmap.BlockLinearMap.from_blocks([np.eye(2), np.array([[2.0, 0.0], [0.0, 0.0]])])
    K = linmap.distortion(L, omega_sym(2)).K
    premise_K = linmap.complex_dilatation_check(L, 5.0).minimal_premise_K
    expected = (math.sqrt(2) + 1) / (math.sqrt(2) - 1)
    ok = abs(K - 5.0) <= 1e-9 and abs(premise_K - expected) <= 1e-9
    criterion(2, ok, f"K = {K!r}; premise constant = {premise_K!r} (expected {expected!r})")


@pytest.mark.parametrize("n,k,eps", [(3, 2, 1e-3), (3, 3, 1e-4), (4, 2, 1e-3)])
def test_criterion_03_near_calibrated_suite(criterion, n, k, eps):
    cfg = verify.SuiteConfig("prop81", n=n, k=k, eps=eps, trials=100_000, seed=3, chunk=25_000)
    res = verify.run_suite(cfg)
    ok = (res.trials == 100_000 and res.sampling_failures == 0 and res.violation_count == 0
          and res.runtime < 120)
    criterion(3, ok, f"(n, k, eps) = ({n}, {k}, {eps:g}): {res.trials} accepted, {res.violation_count} violations, "
                     f"{res.disagreements} main-path disagreements, {res.runtime:.1f} s")


def test_criterion_04_perturbation_suite(criterion):
    cfg = verify.SuiteConfig("lemma82", n=3, k=2, nu=(0.01, 0.05, 0.1), trials=10_000, seed=4)
    res = verify.run_suite(cfg)
    ok = res.trials == 30_000 and res.violation_count == 0
    criterion(4, ok, f"{res.trials} pairs over 3 values of nu, {res.violation_count} violations, "
                     f"{res.disagreements} main-path disagreements")


def test_criterion_05_dilatation_suite(criterion):
    cfg = verify.SuiteConfig("lemma32", k=2, K=(1.1, 2.0, 5.0), trials=10_000, seed=5)
    res = verify.run_suite(cfg)
    ok = res.trials == 30_000 and res.violation_count == 0
    criterion(5, ok, f"{res.trials} premise-satisfying maps over 3 values of K, {res.violation_count} violations")


def test_criterion_06_mobius_suite(criterion):
    runs = [verify.run_suite(verify.SuiteConfig("mobius", trials=1000, seed=s, chunk=250)) for s in (6, 60)]
    consts = [r.stats["max_second_order_constant"] for r in runs]
    spread = abs(consts[0] - consts[1]) / min(consts)
    ok = (all(r.violation_count == 0 for r in runs) and all(math.isfinite(c) for c in consts) and spread < 0.10)
    criterion(6, ok, f"violations {[r.violation_count for r in runs]}; second-order constant "
                     f"{consts[0]:.6f} vs {consts[1]:.6f} (relative spread {spread:.2e})")


@pytest.fixture(scope="module")
def ivv_setup():
    L = measure_cover().L
    return L, ivv_choose_k(3, L)


def test_criterion_07_ivv_construction(criterion, ivv_setup):
    L, k = ivv_setup
    H = ivv_H(k)
    x = np.linspace(0.0, 2.0, 200)
    t = np.linspace(2.0 ** -k, 1.0, 64)
    pts = np.stack(np.meshgrid(x, x, t, indexing="ij"), axis=-1).reshape(-1, 3)
    df = numdiff.distortion_field(H, points=pts)
    min_pull = float(df.pullback.min())
    min_log2_pull = float(df.log2_pullback.min())
    lower_ok = min_pull >= 1.0 - 1e-6

    F = ivv_F(k, ell_max=20)
    below = np.stack(np.meshgrid(x[::10], x[::10], np.linspace(-1.0, 0.0, 11), indexing="ij"), -1).reshape(-1, 3)
    runs = F.value_runs(below)
    zero_ok = bool(np.all(runs.data[runs.weights > 0] == 0.0))

    small_t = np.concatenate([np.linspace(0.0, 0.01, 101)[1:], np.geomspace(1e-5, 0.01, 40)])
    above = np.stack(np.meshgrid(x[::10], x[::10], small_t, indexing="ij"), -1).reshape(-1, 3)
    log2_bound = 1.0 + 0.5 * math.log2(k) + np.log2(above[:, 2])
    excess = float((F.value_runs(above).log2_norm() - log2_bound).max())
    growth_ok = excess <= math.log2(1.0 + 1e-9)

    fd = numdiff.distortion_field(F, points=above)
    max_log2_K = float(max(df.log2_K.max(), fd.log2_K.max()))
    finite_ok = math.isfinite(max_log2_K)

    ok = lower_ok and zero_ok and growth_ok and finite_ok
    criterion(7, ok, f"L_hat = {L:.6f}, k = {k}: min pullback on the strip grid = {min_pull:.6g} "
                     f"(log2 = {min_log2_pull:.7g}; need >= 1 - 1e-6: {lower_ok}); F = 0 for t <= 0: {zero_ok}; "
                     f"max log2(|F| / (2 sqrt(k) t)) = {excess:.3g} ({growth_ok}); "
                     f"max log2 K = {max_log2_K:.6g} (finite: {finite_ok})")


def test_criterion_08_rosay_construction(criterion):
    table = numdiff.rosay_ratio_scan(range(10, 31))
    prods = [n * r for n, r in table]
    spread = max(prods) / min(prods)
    ratios_ok = all(r < 1 for _, r in table)

    rc = rosay_F(1.5)
    n0 = rc.n0
    th = np.linspace(0.0, 2.0 * np.pi, 200, endpoint=False)
    rings = [np.geomspace(2.0 ** -(n + 1), 2.0 ** -n, 200, endpoint=False) for n in range(n0, n0 + 8)]
    rings.append(np.geomspace(1.5 * 2.0 ** -n0 * (1 + 1e-9), 1.0, 400))
    r = np.concatenate(rings)
    R, T = np.meshgrid(r, th, indexing="ij")
    pts = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    df = numdiff.distortion_field(rc.field, points=pts)
    max_K = float(df.K.max())

    runs = rc.field.value_runs(zero_points(range(n0, n0 + 12)))
    norms = np.linalg.norm(runs.data[:, :2], axis=2)
    zeros = int(np.sum(np.all(norms == 0.0, axis=1)))

    ok = spread < 4 and ratios_ok and max_K <= 1.5 + 0.01 and zeros >= 5
    criterion(8, ok, f"max/min of n * ratio over n = 10..30 = {spread:.4f}; all ratios < 1: {ratios_ok}; "
                     f"C_hat = {rc.C_hat:.4f}, n0 = {n0}; max grid K = {max_K:.6f}; common zeros a_n found: {zeros}")


def test_criterion_09_pl_approximation(criterion):
    M = calibrated_mobius(4000.0 * np.array([0.6, 0.64, 0.48]))
    F = mobius_component_curve(3, 2, 1, M, constants=np.array([[0.0, 0.0, 0.0], [0.3, -0.2, 0.1]]))
    U = Box((0.0,) * 3, (0.125,) * 3)
    errors = []
    at6 = {}
    for j in range(3, 8):
        start = time.perf_counter()
        pl = plmesh.pl_interpolant(F, plmesh.dyadic_mesh(U, j))
        errors.append(plmesh.approximation_error(F, pl, U).value)
        if j == 6:
            rep = plmesh.pl_distortion_report(pl)
            cons = plmesh.adjacent_index_consistency(pl)
            at6 = {"max_K": float(rep.K.max()),
                   "same": float(np.mean(rep.dominating_index == rep.dominating_index[0])),
                   "consistent": cons.consistent, "pairs": cons.pairs,
                   "seconds": time.perf_counter() - start}
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    ok = (all(b < a for a, b in zip(errors, errors[1:])) and all(3 <= q <= 5 for q in ratios)
          and at6["max_K"] <= 1.05 and at6["same"] == 1.0 and at6["consistent"] and at6["seconds"] < 180)
    criterion(9, ok, f"errors {[f'{e:.3e}' for e in errors]}, ratios {[f'{q:.3f}' for q in ratios]}; at j = 6: "
                     f"max K = {at6['max_K']:.8f}, same index on {100 * at6['same']:.0f}% of simplices, "
                     f"{at6['pairs']} adjacent pairs consistent: {at6['consistent']}, {at6['seconds']:.1f} s")


def test_criterion_10_calibrated_battery(criterion):
    res = verify.run_suite(verify.SuiteConfig("battery", trials=1000, seed=10, chunk=250))
    checks = {}
    for v in res.violations:
        checks[v.check] = checks.get(v.check, 0) + 1
    ok = res.trials == 1000 and res.violation_count == 0
    criterion(10, ok, f"{res.trials} triples, violations by check {checks or 'none'}; "
                      f"max growth ratio {res.stats['max_growth_ratio']:.4f} (bound 8), "
                      f"max local-distortion fraction {res.stats['max_local_distortion_fraction']:.4f}")


SMALL = {"prop81": dict(eps=1e-3, trials=3000, chunk=1000), "lemma82": dict(trials=900, chunk=300),
         "lemma32": dict(trials=900, chunk=300), "mobius": dict(trials=30, chunk=10),
         "battery": dict(trials=12, chunk=4)}


def _cli_outputs(tmp_path, suite, workers, tag):
    out = tmp_path / f"{suite}-{tag}"
    args = [sys.executable, "-m", "qrcurves", "verify", "run", suite, "--seed", "11", "--out", str(out),
            "--workers", str(workers)]
    for key, val in SMALL[suite].items():
        args += [f"--{key}", str(val)]
    proc = subprocess.run(args, capture_output=True, text=True, env={**os.environ})
    assert proc.returncode == 0, proc.stderr
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"}


def test_criterion_11_determinism(criterion, tmp_path):
    mismatched = []
    for suite in verify.SUITES:
        cfg = verify.SuiteConfig(suite, seed=11, **SMALL[suite])
        first = dumps(verify.run_suite(cfg, workers=1).to_json_dict())
        again = dumps(verify.run_suite(cfg, workers=1).to_json_dict())
        multi = dumps(verify.run_suite(cfg, workers=3).to_json_dict())
        if not first == again == multi:
            mismatched.append(f"{suite} (api)")
        one = _cli_outputs(tmp_path, suite, 1, "a")
        if one != _cli_outputs(tmp_path, suite, 1, "b") or one != _cli_outputs(tmp_path, suite, 2, "c"):
            mismatched.append(f"{suite} (cli)")
    ok = not mismatched
    criterion(11, ok, f"{len(verify.SUITES)} suites rerun with 1 and several workers, through the API and the CLI; "
                      f"mismatches: {mismatched or 'none'}")
