"""Command-line front end.

Numeric results go to files in --out (JSON and CSV plus manifest.json); a short
summary goes to standard output. Exit codes: 0 success, 2 invalid input or failed
precondition, 3 suite violations.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import exterior, linmap, numdiff, plmesh, verify
from .curves import (Box, DomainError, RosayN0Error, branched_cover_A, calibrated_mobius, ivv_F, ivv_H,
                     mobius_component_curve, rosay_F, zorich)
from .curves.branched import UnsupportedDimension
from .manifest import OutputWriter, RunManifest, utc_now

EXIT_OK, EXIT_INVALID, EXIT_VIOLATION = 0, 2, 3
CURVES = ("branched", "zorich", "ivv", "ivv_H", "rosay", "mobius")


class UsageError(Exception):
    """Invalid flags or unreadable input files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# defaults per command; the config file and then explicit flags override them
DEFAULTS = {
    "comass": {"form": "volx", "n": 3, "k": 2, "form_file": None, "method": "auto", "restarts": 32,
               "iterations": 5000, "resolution": 8, "seed": 0},
    "linmap": {"matrix_file": None, "random": False, "n": 3, "k": 2, "eps": None, "K": None, "seed": 0},
    "curve": {"K": 1.5, "k": None, "n0_cap": 10000, "ell_max": 12, "grid": 600,
              "pole": [2400.0, 2560.0, 1920.0], "i0": 1, "points_file": None,
              "lower": None, "upper": None, "resolution": 8},
    "field": {"K": 1.5, "k": None, "n0_cap": 10000, "ell_max": 12, "grid": 600,
              "pole": [2400.0, 2560.0, 1920.0], "i0": 1, "lower": None, "upper": None, "resolution": 16},
    "plapprox": {"pole_distance": 4000.0, "side": 0.125, "levels": [3, 7], "scheme": "barycentric",
                 "consistency_level": 6, "sample_level": 14, "seed": 0},
    "verify": {"n": 3, "k": 2, "eps": 1e-3, "nu": [0.01, 0.05, 0.1], "K": [1.1, 2.0, 5.0], "trials": 10000,
               "seed": 0, "chunk": 10000, "tolerance": 1e-9, "level": 9},
}


def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--out", default=S, help="output directory (default: qrcurves-out)")
    p.add_argument("--config", default=S, help="JSON file with parameters named like the flags")
    p.add_argument("--workers", type=int, default=S, help="worker processes (default: available CPUs)")


def _curve_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("name", choices=CURVES)
    p.add_argument("--K", type=float, default=S, help="target distortion for rosay")
    p.add_argument("--k", type=int, default=S, help="number of blocks")
    p.add_argument("--n0-cap", type=int, default=S)
    p.add_argument("--ell-max", type=int, default=S)
    p.add_argument("--grid", type=int, default=S, help="grid used to measure the branched cover constants")
    p.add_argument("--pole", type=float, nargs=3, default=S)
    p.add_argument("--i0", type=int, default=S)
    p.add_argument("--lower", type=float, nargs="+", default=S)
    p.add_argument("--upper", type=float, nargs="+", default=S)
    p.add_argument("--resolution", type=int, default=S)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    ap = _Parser(prog="qrcurves", description="Quasiregular curve toolkit", allow_abbrev=False)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("comass", help="comass of an n-form", allow_abbrev=False)
    p.add_argument("--form", choices=["volx", "vol", "sym", "file"], default=S)
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--form-file", default=S)
    p.add_argument("--method", choices=["auto", "closed", "ascent", "brute"], default=S)
    p.add_argument("--restarts", type=int, default=S)
    p.add_argument("--iterations", type=int, default=S)
    p.add_argument("--resolution", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    _common(p)

    p = sub.add_parser("linmap", help="distortion of a block linear map", allow_abbrev=False)
    p.add_argument("--matrix-file", default=S)
    p.add_argument("--random", action="store_true", default=S, help="draw a near-calibrated map (needs --eps)")
    p.add_argument("--n", type=int, default=S)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--eps", type=float, default=S)
    p.add_argument("--K", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    _common(p)

    p = sub.add_parser("curve", help="build or sample a curve construction", allow_abbrev=False)
    csub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    for action in ("build", "sample"):
        q = csub.add_parser(action, allow_abbrev=False)
        _curve_flags(q)
        if action == "sample":
            q.add_argument("--points-file", default=S)
        _common(q)

    p = sub.add_parser("field", help="distortion field of a curve over a box", allow_abbrev=False)
    _curve_flags(p)
    _common(p)

    p = sub.add_parser("plapprox", help="PL approximation study of a Möbius component curve", allow_abbrev=False)
    p.add_argument("--pole-distance", type=float, default=S)
    p.add_argument("--side", type=float, default=S)
    p.add_argument("--levels", type=int, nargs=2, default=S)
    p.add_argument("--scheme", choices=plmesh.SCHEMES, default=S)
    p.add_argument("--consistency-level", type=int, default=S)
    p.add_argument("--sample-level", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    _common(p)

    p = sub.add_parser("verify", help="randomized suites", allow_abbrev=False)
    vsub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = vsub.add_parser("run", allow_abbrev=False)
    q.add_argument("suite", choices=verify.SUITES)
    q.add_argument("--n", type=int, default=S)
    q.add_argument("--k", type=int, default=S)
    q.add_argument("--eps", type=float, default=S)
    q.add_argument("--nu", type=float, nargs="+", default=S)
    q.add_argument("--K", type=float, nargs="+", default=S)
    q.add_argument("--trials", type=int, default=S)
    q.add_argument("--seed", type=int, default=S)
    q.add_argument("--chunk", type=int, default=S)
    q.add_argument("--tolerance", type=float, default=S)
    q.add_argument("--level", type=int, default=S)
    _common(q)
    return ap


def _load_json(path: str, what: str):
    if not os.path.exists(path):
        raise UsageError(f"missing {what} file: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed {what} file {path}: {exc}") from exc


def resolve_params(command: str, ns: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    params = dict(DEFAULTS[command])
    params["out"] = "qrcurves-out"
    params["workers"] = os.cpu_count() or 1
    given = vars(ns)
    if "config" in given:
        cfg = _load_json(given["config"], "config")
        if not isinstance(cfg, dict):
            raise UsageError(f"malformed config file {given['config']}: expected a JSON object")
        for key, val in cfg.items():
            key = key.replace("-", "_")
            if key not in params:
                raise UsageError(f"unknown config key {key!r} for {command}")
            params[key] = val
    for key, val in given.items():
        if key in ("command", "action", "config", "name", "suite"):
            continue
        params[key] = val
    if command == "linmap" and params["random"] and params["eps"] is None:
        raise UsageError("linmap --random needs --eps")
    return params


# ---------------------------------------------------------------------------
# commands


def _make_form(p: dict) -> exterior.NForm:
    if p["form"] == "volx":
        return exterior.make_vol_cross(p["n"], p["k"])
    if p["form"] == "vol":
        return exterior.volume_form(p["n"])
    if p["form"] == "sym":
        return exterior.omega_sym(p["k"])
    if not p["form_file"]:
        raise UsageError("--form file needs --form-file")
    try:
        return exterior.NForm.from_json_dict(_load_json(p["form_file"], "form"))
    except exterior.FormError as exc:
        raise UsageError(str(exc)) from exc


def cmd_comass(p: dict, out: OutputWriter) -> tuple[int, str]:
    form = _make_form(p)
    closed = exterior.comass_closed_form(form)
    method = p["method"]
    if method == "auto":
        method = "closed" if closed is not None else "ascent"
    result = {"form": form.to_json_dict(), "method": method, "closed_form": closed}
    if method == "closed":
        if closed is None:
            raise linmap.PreconditionError("no closed form is known for this form")
        result["value"] = closed
    elif method == "ascent":
        res = exterior.comass(form, restarts=p["restarts"], iterations=p["iterations"], seed=p["seed"])
        result.update(res.to_json_dict())
        result["value"] = res.value
    else:
        result["value"] = verify.brute_force_comass(form, p["resolution"])
    out.write_json("comass.json", result)
    return EXIT_OK, f"comass = {result['value']:.12g} ({method})"


def cmd_linmap(p: dict, out: OutputWriter) -> tuple[int, str]:
    if p["random"]:
        L, stats = linmap.random_near_calibrated(p["n"], p["k"], p["eps"], p["seed"])
        source = {"random": "near-calibrated", "attempts": stats.attempts}
    else:
        if not p["matrix_file"]:
            raise UsageError("linmap needs --matrix-file or --random")
        data = _load_json(p["matrix_file"], "matrix")
        mat = np.asarray(data["matrix"] if isinstance(data, dict) else data, dtype=float)
        n = int(data.get("n", mat.shape[1])) if isinstance(data, dict) else mat.shape[1]
        try:
            L = linmap.BlockLinearMap.from_matrix(mat, n)
        except ValueError as exc:
            raise UsageError(f"malformed matrix: {exc}") from exc
        source = {"matrix_file": p["matrix_file"]}
    result = {"source": source, "matrix": L.matrix, "n": L.n, "k": L.k,
              "distortion": linmap.distortion(L).to_json_dict()}
    if p["eps"] is not None:
        result["classification"] = linmap.classify_near_calibrated(L, p["eps"]).to_json_dict()
    if p["K"] is not None:
        result["dilatation"] = linmap.complex_dilatation_check(L, p["K"]).to_json_dict()
    out.write_json("linmap.json", result)
    return EXIT_OK, f"K = {result['distortion']['K']}"


def build_curve(name: str, p: dict):
    """(CurveField, metadata) for a named construction."""
    if name == "branched":
        F = branched_cover_A(3, p["grid"])
        return F, F.metadata()
    if name == "zorich":
        F = zorich(3, p["grid"])
        return F, F.metadata()
    if name == "ivv":
        F = ivv_F(p["k"], p["ell_max"], p["grid"])
        return F, F.metadata()
    if name == "ivv_H":
        F = ivv_H(p["k"], p["grid"])
        return F, F.metadata()
    if name == "rosay":
        rc = rosay_F(p["K"], p["k"] or 2, p["n0_cap"])
        meta = rc.field.metadata()
        meta.update({"n0": rc.n0, "C_hat": rc.C_hat})
        return rc.field, meta
    M = calibrated_mobius(np.asarray(p["pole"], dtype=float))
    F = mobius_component_curve(3, p["k"] or 2, p["i0"], M)
    return F, F.metadata()


def _region(F, p: dict) -> Box:
    if p["lower"] is None or p["upper"] is None:
        raise UsageError("--lower and --upper are required")
    if len(p["lower"]) != F.n or len(p["upper"]) != F.n:
        raise UsageError(f"--lower/--upper need {F.n} values for this curve")
    return Box(tuple(p["lower"]), tuple(p["upper"]))


def cmd_curve(action: str, name: str, p: dict, out: OutputWriter) -> tuple[int, str]:
    F, meta = build_curve(name, p)
    if action == "build":
        out.write_json("curve.json", meta)
        return EXIT_OK, f"built {F.name}: n={F.n}, k={F.k}"
    if p["points_file"]:
        data = _load_json(p["points_file"], "points")
        pts = np.atleast_2d(np.asarray(data["points"] if isinstance(data, dict) else data, dtype=float))
    else:
        pts = numdiff.region_grid(_region(F, p), p["resolution"])
    runs = F.value_runs(pts)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if int(np.max(runs.k)) * F.n <= 10_000:
        vals = runs.dense()
        w.writerow([f"x{i + 1}" for i in range(F.n)] + [f"F{j + 1}" for j in range(vals.shape[1])])
        for x, v in zip(pts, vals):
            w.writerow([repr(float(a)) for a in x] + [repr(float(b)) for b in v])
    else:
        # run-length form: one row per distinct block run
        w.writerow([f"x{i + 1}" for i in range(F.n)] + ["first_block", "count", "log2_scale"]
                   + [f"v{i + 1}" for i in range(F.n)])
        starts = runs.block_start
        for i, x in enumerate(pts):
            for r in range(runs.weights.shape[1]):
                if runs.weights[i, r] > 0:
                    w.writerow([repr(float(a)) for a in x] + [int(starts[i, r]), int(runs.weights[i, r]),
                                                              repr(float(runs.log2_scale[i]))]
                               + [repr(float(b)) for b in runs.data[i, r]])
    out.write_text("samples.csv", buf.getvalue())
    out.write_json("curve.json", meta)
    return EXIT_OK, f"sampled {len(pts)} points of {F.name}"


def cmd_field(name: str, p: dict, out: OutputWriter) -> tuple[int, str]:
    F, meta = build_curve(name, p)
    df = numdiff.distortion_field(F, _region(F, p), p["resolution"])
    summary = df.summary()
    out.write_text("field.csv", df.to_csv())
    out.write_json("field.json", {"curve": meta, "summary": summary})
    return EXIT_OK, f"max log2 K = {summary['max_log2_K']}, min log2 pullback = {summary['min_log2_pullback']}"


def cmd_plapprox(p: dict, out: OutputWriter) -> tuple[int, str]:
    d = float(p["pole_distance"])
    pole = d * np.array([0.6, 0.64, 0.48])
    M = calibrated_mobius(pole)
    F = mobius_component_curve(3, 2, 1, M, constants=np.array([[0.0, 0.0, 0.0], [0.3, -0.2, 0.1]]))
    U = Box((0.0,) * 3, (float(p["side"]),) * 3)
    lo, hi = p["levels"]
    rows, levels = [], {}
    prev = None
    for j in range(lo, hi + 1):
        mesh = plmesh.dyadic_mesh(U, j, p["scheme"])
        pl = plmesh.pl_interpolant(F, mesh)
        err = plmesh.approximation_error(F, pl, U, p["sample_level"], p["seed"])
        rep = plmesh.pl_distortion_report(pl).summary()
        ratio = prev / err.value if prev else None
        entry = {"level": j, "simplices": len(mesh.simplices), "error": err.value, "error_samples": err.samples,
                 "ratio": ratio, "max_K": rep["max_K"],
                 "dominating_index_histogram": rep["dominating_index_histogram"],
                 "adjacent_same_index_fraction": rep["adjacent_same_index_fraction"]}
        if j == p["consistency_level"]:
            entry["consistency"] = plmesh.adjacent_index_consistency(pl).to_json_dict()
        levels[str(j)] = entry
        rows.append([j, len(mesh.simplices), repr(err.value), "" if ratio is None else repr(ratio),
                     repr(rep["max_K"]), repr(rep["adjacent_same_index_fraction"])])
        prev = err.value
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "simplices", "error", "ratio", "max_K", "adjacent_same_index_fraction"])
    w.writerows(rows)
    out.write_text("plapprox.csv", buf.getvalue())
    out.write_json("plapprox.json", {"curve": F.metadata(), "region": {"lower": U.lower, "upper": U.upper},
                                     "levels": levels})
    return EXIT_OK, f"levels {lo}..{hi}: final error {prev:.4g}"


def cmd_verify(suite: str, p: dict, out: OutputWriter) -> tuple[int, str]:
    keys = ("n", "k", "eps", "nu", "K", "trials", "seed", "chunk", "tolerance", "level")
    cfg = verify.SuiteConfig(suite=suite, **{key: p[key] for key in keys})
    res = verify.run_suite(cfg, workers=int(p["workers"]))
    out.write_json(f"{suite}.json", res.to_json_dict())
    out.write_text(f"{suite}_violations.csv", res.violations_csv())
    code = EXIT_VIOLATION if res.violation_count else EXIT_OK
    msg = (f"{suite}: {res.trials} trials, {res.violation_count} violations, "
           f"{res.sampling_failures} sampling failures, {res.runtime:.1f} s")
    return code, msg


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = build_parser().parse_args(argv)
        command = ns.command
        p = resolve_params(command, ns)
        manifest = RunManifest(command=["qrcurves"] + argv, params={k: v for k, v in p.items() if k != "out"},
                               seed=p.get("seed"), started=utc_now())
        out = OutputWriter(p["out"], manifest)
        if command == "comass":
            code, msg = cmd_comass(p, out)
        elif command == "linmap":
            code, msg = cmd_linmap(p, out)
        elif command == "curve":
            code, msg = cmd_curve(ns.action, ns.name, p, out)
        elif command == "field":
            code, msg = cmd_field(ns.name, p, out)
        elif command == "plapprox":
            code, msg = cmd_plapprox(p, out)
        else:
            code, msg = cmd_verify(ns.suite, p, out)
        out.finish()
        print(msg)
        return code
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RosayN0Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (linmap.PreconditionError, verify.ConfigError, verify.CostGuardError, DomainError,
            UnsupportedDimension, exterior.FormError, plmesh.MeshError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
