import math

import numpy as np
import pytest

from qrcurves import numdiff
from qrcurves.curves import (DomainError, MobiusMap, RosayN0Error, branched_cover_A, calibrated_mobius,
                             ivv_choose_k, ivv_F, ivv_G, ivv_h, ivv_H, ivv_s, measure_cover,
                             mobius_component_curve, mobius_derivative, mobius_eval, random_mobius, rosay_F,
                             rosay_u, zorich)
from qrcurves.curves.branched import UnsupportedDimension
from qrcurves.curves.ivv import OutOfWindow, choice_of_k_lhs, h_strip_values, scaled_pullback
from qrcurves.curves.rosay import annulus_sup_ratio, choose_n0, cutoff_slope_bound, zero_points

RNG = np.random.default_rng(2024)
SMALL_K = 6


def relative_fd_error(F, pts, h=1e-5):
    worst = 0.0
    for p in pts:
        exact = F.jacobian(p)
        approx = numdiff.fd_matrix(F, p, h)
        worst = max(worst, float(np.abs(exact - approx).max() / max(np.abs(exact).max(), 1e-300)))
    return worst


def away_from_seams(F, pts, margin=1e-3):
    if F.seam_distance is None:
        return pts
    return pts[F.seam_distance(pts) > margin]


# ---------------------------------------------------------------------------
# branched cover and Zorich


def test_cover_lands_on_sphere():
    g = np.linspace(-3.0, 3.0, 100)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    assert np.abs(np.linalg.norm(branched_cover_A()(pts), axis=1) - 1.0).max() < 1e-12


def test_cover_periodicity():
    A = branched_cover_A()
    x = RNG.uniform(-5, 5, size=(500, 2))
    for shift in ([2.0, 0.0], [0.0, 2.0], [-4.0, 6.0]):
        assert np.abs(A(x + shift) - A(x)).max() < 1e-12


def test_cover_jacobian_lower_bound():
    c = measure_cover()
    assert c.jacobian_min >= (1.0 / c.L) ** 2 - 1e-12
    assert c.lipschitz <= c.L
    A = branched_cover_A()
    assert A.params["L_hat"] == c.L


def test_cover_surjective_onto_both_hemispheres():
    g = np.linspace(0.0, 2.0, 201)
    vals = branched_cover_A()(np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2))
    assert vals[:, 2].max() == pytest.approx(1.0) and vals[:, 2].min() == pytest.approx(-1.0)


def test_cover_continuous_across_fold_lines():
    A = branched_cover_A()
    y = RNG.uniform(0, 2, size=200)
    for line in (0.0, 1.0, 2.0):
        left = A(np.stack([np.full_like(y, line - 1e-14), y], 1))
        right = A(np.stack([np.full_like(y, line + 1e-14), y], 1))
        assert np.abs(left - right).max() < 1e-12


def test_cover_unsupported_dimension():
    with pytest.raises(UnsupportedDimension):
        branched_cover_A(4)
    with pytest.raises(UnsupportedDimension):
        zorich(5)


def test_zorich_modulus_and_slice():
    Z, A = zorich(), branched_cover_A()
    pts = RNG.uniform(-2, 2, size=(300, 3))
    assert np.allclose(np.linalg.norm(Z(pts), axis=1), np.exp(pts[:, 2]), rtol=1e-14, atol=0)
    flat = pts.copy()
    flat[:, 2] = 0.0
    assert np.abs(Z(flat) - A(flat[:, :2])).max() == 0.0


def test_zorich_distortion_finite_and_stable_under_refinement():
    Z = zorich()
    from qrcurves.curves import Box
    region = Box((0.03, 0.07, -0.5), (0.97, 0.91, 0.5))
    coarse = numdiff.distortion_field(Z, region, resolution=15).K.max()
    fine = numdiff.distortion_field(Z, region, resolution=29).K.max()
    assert math.isfinite(coarse) and math.isfinite(fine)
    assert abs(fine - coarse) / fine < 0.05


@pytest.mark.parametrize("make", [branched_cover_A, zorich, ivv_s, ivv_h])
def test_analytic_derivative_matches_central_differences(make):
    F = make()
    lo = [0.01] * F.n
    hi = [1.99] * F.n
    if F.n == 3:
        lo[2], hi[2] = 0.51, 0.99
    pts = away_from_seams(F, RNG.uniform(lo, hi, size=(300, F.n)))[:100]
    assert len(pts) == 100
    assert relative_fd_error(F, pts) < 1e-6


# ---------------------------------------------------------------------------
# IVV


def test_choose_k_examples():
    assert ivv_choose_k(3, 2.0) == 128017
    assert ivv_choose_k(3, 1.0) == 4005


@pytest.mark.parametrize("L", [1.0, 1.3, 2.0, 3.627503875697344])
def test_choose_k_minimal(L):
    k = ivv_choose_k(3, L)
    assert choice_of_k_lhs(3, L, k) >= 1
    assert choice_of_k_lhs(3, L, k - 1) < 1


def test_choose_k_rejects_bad_input():
    with pytest.raises(ValueError):
        ivv_choose_k(2, 2.0)
    with pytest.raises(ValueError):
        ivv_choose_k(3, 0.5)


def test_h_glues_to_s_at_strip_ends():
    x = RNG.uniform(-1, 1, size=(200, 2))
    h, s = ivv_h(), ivv_s()
    for ell in (1, 3, 7):
        w = 2.0 ** -ell
        # h_l(x, t) = 2^-l h(x, 2^(l-1) t) on [2^-l, 2^(1-l)]
        lo = w * h(np.column_stack([x, np.full(200, 0.5)]))
        hi = w * h(np.column_stack([x, np.full(200, 1.0)]))
        assert np.abs(lo - s(np.column_stack([2 * x, np.full(200, w)]))).max() < 1e-12
        assert np.abs(hi - s(np.column_stack([x, np.full(200, 2 * w)]))).max() < 1e-12


def test_H_strip_gluing():
    x = RNG.uniform(-1, 1, size=(100, 2))
    for ell in range(1, SMALL_K):
        below = h_strip_values(x, np.full(100, ell), np.full(100, 0.5), SMALL_K).dense()
        above = h_strip_values(x, np.full(100, ell + 1), np.full(100, 1.0), SMALL_K).dense()
        assert np.abs(below - above).max() < 1e-12


def test_G_boundary_values():
    G = ivv_G(SMALL_K, check=False)
    A = branched_cover_A()
    x = RNG.uniform(-1, 1, size=(50, 2))
    top = G(np.column_stack([x, np.ones(50)])).reshape(50, SMALL_K, 3)
    assert np.abs(top - A(x)[:, None, :]).max() < 1e-14
    bottom = G(np.column_stack([x, np.full(50, 0.5)])).reshape(50, SMALL_K, 3)
    assert np.abs(bottom - 2.0 ** -SMALL_K * A(2 * x)[:, None, :]).max() < 1e-14


def test_G_components_bounded_by_one_for_the_admissible_k():
    G = ivv_G()
    g = np.linspace(0.0, 2.0, 41)
    t = np.linspace(0.5, 1.0, 33)
    pts = np.stack(np.meshgrid(g, g, t, indexing="ij"), -1).reshape(-1, 3)
    runs = G.value_runs(pts)
    blocks = np.where(runs.weights > 0, runs.block_norms_log2(), -np.inf)
    assert blocks.max() <= 1e-12


def test_H_pullback_on_upper_strips():
    # the bound holds where the strip scale stays moderate; the full-strip claim is in the acceptance suite
    L = measure_cover().L
    k = ivv_choose_k(3, L)
    H = ivv_H(k)
    g = np.linspace(0.0, 2.0, 60)
    t = np.linspace(1 / 64, 1.0, 40)
    pts = np.stack(np.meshgrid(g, g, t, indexing="ij"), -1).reshape(-1, 3)
    df = numdiff.distortion_field(H, points=pts)
    assert df.pullback.min() >= 1 - 1e-6
    # strip-local pullback: the sum over blocks is positive everywhere
    assert scaled_pullback(H.jacobian_runs(pts)).min() > 0


def test_F_vanishes_on_lower_half_space():
    F = ivv_F(SMALL_K, check=False)
    pts = np.column_stack([RNG.uniform(-5, 5, size=(200, 2)), -RNG.exponential(size=200)])
    pts[:20, 2] = 0.0
    assert np.all(F(pts) == 0.0)


def test_F_growth_bound_and_continuity_at_zero():
    F = ivv_F(SMALL_K, ell_max=30, check=False)
    t = np.geomspace(1e-8, 0.01, 60)
    pts = np.column_stack([RNG.uniform(-1, 1, size=(60, 2)), t])
    assert np.all(np.linalg.norm(F(pts), axis=1) <= 2 * math.sqrt(SMALL_K) * t * (1 + 1e-12))


def test_F_continuous_across_strip_boundaries():
    F = ivv_F(SMALL_K, ell_max=12, check=False)
    x = RNG.uniform(-1, 1, size=(50, 2))
    for ell in (0, 1, 2, 5):
        t = 2.0 ** -ell
        lo = F(np.column_stack([x, np.full(50, t * (1 - 1e-13))]))
        hi = F(np.column_stack([x, np.full(50, t)]))
        assert np.abs(lo - hi).max() < 1e-11 * max(1.0, np.abs(hi).max())


def test_F_distortion_is_scale_invariant_between_strips():
    F = ivv_F(SMALL_K, check=False)
    pts = np.column_stack([RNG.uniform(-1, 1, size=(100, 2)), RNG.uniform(0.55, 0.95, size=100)])
    a = numdiff.distortion_field(F, points=pts).log2_K
    b = numdiff.distortion_field(F, points=pts / 2).log2_K
    # k is far below the admissible value, so some points are not sense-preserving (K = inf)
    fin = np.isfinite(a)
    assert np.array_equal(fin, np.isfinite(b)) and fin.mean() > 0.5
    assert np.abs(a[fin] - b[fin]).max() < 1e-9


def test_F_window():
    F = ivv_F(SMALL_K, ell_max=3, check=False)
    with pytest.raises(OutOfWindow):
        F(np.array([[0.1, 0.2, 2.0 ** -10]]))


def test_ivv_k_below_admissible_rejected():
    with pytest.raises(ValueError):
        ivv_H(10)


# ---------------------------------------------------------------------------
# Rosay


def test_rosay_u_zero_sequence():
    u = rosay_u()
    runs = u.value_runs(zero_points(range(2, 40)))
    assert np.all(np.linalg.norm(runs.data[:, :2], axis=2) == 0.0)
    assert np.all(u(np.zeros((1, 2))) == 0.0)


def test_rosay_u_continuous_across_annuli():
    u = rosay_u()
    th = RNG.uniform(0, 2 * np.pi, size=50)
    for n in (3, 5, 8):
        r = 2.0 ** -n
        inner = u.value_runs(np.column_stack([r * (1 - 1e-14) * np.cos(th), r * (1 - 1e-14) * np.sin(th)]))
        outer = u.value_runs(np.column_stack([r * np.cos(th), r * np.sin(th)]))
        a, b = inner.scaled(), outer.scaled()
        assert np.abs(a - b).max() <= 1e-10 * np.abs(b).max()


def test_rosay_u_derivative_matches_central_differences():
    u = rosay_u()
    r = RNG.uniform(0.2, 0.9, size=100)
    th = RNG.uniform(0, 2 * np.pi, size=100)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    assert relative_fd_error(u, pts, h=1e-6) < 1e-6


def test_rosay_ratios_below_one_and_decaying():
    table = dict(numdiff.rosay_ratio_scan(range(10, 31)))
    assert all(v < 1 for v in table.values())
    for n in range(10, 16):
        assert table[2 * n] < table[n]


def test_rosay_n_times_ratio_bounded():
    prods = [n * annulus_sup_ratio(n) for n in range(10, 31)]
    assert max(prods) / min(prods) < 4


def test_rosay_cutoff_slope_within_bound():
    # transition derivative relative to 2^n, against the allowed 6
    assert cutoff_slope_bound() <= 6.0


def test_rosay_F_tail_is_holomorphic():
    rc = rosay_F(1.5)
    a0 = 1.5 * 2.0 ** -rc.n0
    r = np.geomspace(a0 * 1.0001, 0.9, 200)
    th = RNG.uniform(0, 2 * np.pi, size=200)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    assert np.all(numdiff.tail_ratio(rc, pts) < 1e-12)


def test_rosay_F_metadata_and_n0():
    rc = rosay_F(1.5)
    assert rc.n0 % 2 == 0
    assert rc.C_hat / rc.n0 <= (1.5 - 1) / (1.5 + 1)
    assert rc.field.params["C_hat"] == rc.C_hat


def test_rosay_n0_cap_error_reports_constant():
    with pytest.raises(RosayN0Error, match="C_hat"):
        choose_n0(1.001, 9.8, cap=100)
    with pytest.raises(ValueError):
        rosay_F(1.5, k=1)


# ---------------------------------------------------------------------------
# Möbius


def test_identity_mobius():
    M = MobiusMap.identity(3)
    y = RNG.normal(size=(10, 3))
    assert np.abs(mobius_eval(M, y) - y).max() == 0.0
    assert np.abs(mobius_derivative(M, y) - np.eye(3)).max() == 0.0


def test_mobius_derivative_norm_at_origin():
    for seed in range(10):
        M = random_mobius(np.random.default_rng(seed), 3)
        D = mobius_derivative(M, np.zeros(3))
        assert np.linalg.norm(D, 2) == pytest.approx(M.c / float(M.p @ M.p), rel=1e-12)
        assert M.derivative_norm_at_origin() == pytest.approx(M.c / float(M.p @ M.p), rel=1e-15)


def test_mobius_pole_rejected():
    M = random_mobius(np.random.default_rng(1), 3)
    with pytest.raises(DomainError):
        mobius_eval(M, M.p)


def test_mobius_component_curve_is_calibrated():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        M = random_mobius(rng, 3)
        F = mobius_component_curve(3, 3, 2, M, rng.normal(size=(3, 3)))
        pts = rng.uniform(-0.5, 0.5, size=(200, 3))
        df = numdiff.distortion_field(F, points=pts)
        assert np.abs(df.K - 1.0).max() < 1e-10
        assert np.all(df.dominating_index == 2)
        assert relative_fd_error(F, pts[:20]) < 1e-6


def test_calibrated_mobius_normalization():
    M = calibrated_mobius(np.array([3.0, 4.0, 0.0]))
    assert np.abs(M.at_origin()).max() < 1e-12
    assert M.derivative_norm_at_origin() == pytest.approx(1.0)
    assert M.orientation == 1


def test_mobius_json_round_trip():
    M = random_mobius(np.random.default_rng(3), 3)
    back = MobiusMap.from_json_dict(M.to_json_dict())
    assert np.array_equal(back.A, M.A) and back.c == M.c and np.array_equal(back.p, M.p)


def test_mobius_component_curve_rejects_bad_index():
    with pytest.raises(ValueError):
        mobius_component_curve(3, 2, 3, MobiusMap.identity(3))
