"""Fit the Rosay cutoff profiles as convex mixtures of shifted logistic steps.

Each profile is sum_j c_j base((s - s_j) / w_j) with c_j >= 0 and sum c_j = 1.
The weights minimize max_n n * B_n, where B_n bounds the dilatation ratio on
A_n from above by |cutoff'| * |P| / |d P_1|, subject to a slope cap that keeps
|d psi_n|, |d phi_n| <= 6 * 2^n. This is a linear program in c.

Usage: python3 scripts/fit_rosay_cutoff.py [--widths 0.25 0.5] [--step 0.25]
Prints the (offset, width, weight) tables stored in qrcurves.curves.rosay.
"""
import argparse

import numpy as np
from scipy.optimize import linprog

from qrcurves.curves.rosay import base_step

NS = list(range(10, 41)) + [60, 90, 140, 200]


def bound_rows(kind: str, sg: np.ndarray, th: np.ndarray) -> list[np.ndarray]:
    rows = []
    for n in NS:
        rho = (1.0 if kind == "psi" else 1.75) + 0.25 * sg
        w = rho[:, None] * np.exp(1j * th)[None]
        d_pure = (n - 1) * w ** (n - 2) * (w - 1.5) + w ** (n - 1)
        poly = w ** n * (w - 0.75) if kind == "psi" else w ** (n - 2) * (w - 3)
        # |d_zbar u| <= sqrt2 |c'(rho)| |P| / 2 and |d_z u| >= |d_pure|; c' = 4 S'(s)
        rows.append(n * (np.sqrt(2.0) * 2.0 * np.abs(poly) / np.abs(d_pure)).max(axis=1))
    return rows


def fit(widths, step_frac: float, cap: float = 1.49):
    steps = [(s0, wd) for wd in widths for s0 in np.arange(0.0, 1.0 - wd + 1e-9, wd * step_frac)]
    sg = np.linspace(0.0, 1.0, 801)
    th = np.linspace(0.0, 2.0 * np.pi, 181)
    slopes = np.array([base_step((sg - s0) / wd)[1] / wd for s0, wd in steps]).T
    out = {}
    for kind in ("psi", "chi"):
        rows = bound_rows(kind, sg, th)
        nb = len(steps)
        a_ub = [np.hstack([slopes * g[:, None], -np.ones((len(sg), 1))]) for g in rows]
        a_ub.append(np.hstack([slopes, np.zeros((len(sg), 1))]))
        b_ub = [np.zeros(len(sg))] * len(rows) + [np.full(len(sg), cap)]
        res = linprog(np.r_[np.zeros(nb), 1.0], A_ub=np.vstack(a_ub), b_ub=np.concatenate(b_ub),
                      A_eq=np.r_[np.ones(nb), 0.0][None], b_eq=[1.0], bounds=[(0, None)] * (nb + 1),
                      method="highs")
        c = res.x[:nb]
        keep = c > 1e-4
        c = c[keep] / c[keep].sum()
        out[kind] = ([(float(s0), float(wd), round(float(ci), 5)) for (s0, wd), ci in zip(np.array(steps)[keep], c)],
                     float(res.fun))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--widths", type=float, nargs="+", default=[0.25, 0.5])
    ap.add_argument("--step", type=float, default=0.25)
    args = ap.parse_args()
    for kind, (table, objective) in fit(args.widths, args.step).items():
        print(f"{kind}: max n*bound = {objective:.4f}")
        for row in table:
            print("   ", row)


if __name__ == "__main__":
    main()
