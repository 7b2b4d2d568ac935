import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrcurves import linmap
from qrcurves.exterior import make_vol_cross, omega_sym
from qrcurves.linmap import BlockLinearMap, PreconditionError

I3 = np.eye(3)
Z3 = np.zeros((3, 3))


def rotation(seed: int, n: int = 3) -> np.ndarray:
    return linmap.random_rotation(np.random.default_rng(seed), n)


def test_op_norm_examples():
    assert linmap.op_norm(BlockLinearMap.from_blocks([I3, I3])) == pytest.approx(math.sqrt(2), abs=1e-15)
    assert linmap.op_norm(np.zeros((6, 3))) == 0.0
    assert linmap.op_norm(np.diag([1.0, 2.0, 3.0])) == pytest.approx(3.0, abs=1e-15)


def test_hs_norm_examples():
    assert linmap.hs_norm(I3) == pytest.approx(math.sqrt(3))
    assert linmap.hs_norm(BlockLinearMap.from_blocks([I3, I3])) == pytest.approx(math.sqrt(6))
    block = 2.5 * rotation(1)
    assert linmap.hs_norm(block) == pytest.approx(2.5 * math.sqrt(3))
    assert linmap.op_norm(block) == pytest.approx(linmap.hs_norm(block) / math.sqrt(3))


def test_distortion_examples():
    rigid = linmap.distortion(BlockLinearMap.from_blocks([np.eye(2), [[2.0, 0.0], [0.0, 0.0]]]), omega_sym(2))
    assert rigid.op_norm ** 2 == pytest.approx(5.0)
    assert rigid.pullback == pytest.approx(1.0)
    assert rigid.K == pytest.approx(5.0, abs=1e-12)
    assert linmap.distortion(BlockLinearMap.from_blocks([I3, Z3])).K == pytest.approx(1.0, abs=1e-15)
    assert linmap.distortion(BlockLinearMap.from_blocks([I3, I3])).K == pytest.approx(math.sqrt(2), abs=1e-14)


def test_distortion_degenerate_cases():
    const = linmap.distortion(np.zeros((6, 3)))
    assert const.constant and const.K == 1.0
    reversed_ = linmap.distortion(BlockLinearMap.from_blocks([np.diag([-1.0, 1.0, 1.0]), Z3]))
    assert reversed_.K == math.inf


def test_distortion_with_explicit_form_matches_default():
    L = BlockLinearMap.from_blocks([rotation(2), 0.1 * rotation(3)])
    assert linmap.distortion(L, make_vol_cross(3, 2)).K == pytest.approx(linmap.distortion(L).K, rel=1e-12)


def test_classify_exact_calibrated_second_block():
    rep = linmap.classify_near_calibrated(BlockLinearMap.from_blocks([Z3, 3.0 * rotation(4)]), 1e-3)
    assert rep.dominating_index == 2
    assert rep.bound_flags == {"a": True, "b": True, "c": True}
    assert rep.block_norms[0] == 0.0


def test_classify_rejects_sqrt2_distortion():
    with pytest.raises(PreconditionError, match="distortion"):
        linmap.classify_near_calibrated(BlockLinearMap.from_blocks([I3, I3]), 0.004)


def test_classify_epsilon_range():
    with pytest.raises(PreconditionError):
        linmap.classify_near_calibrated(BlockLinearMap.from_blocks([I3, Z3]), 1.0 / (100 * 2))


def test_classify_orientation_normalized():
    # a reflected first block is calibrated after the row flip
    L = BlockLinearMap.from_blocks([np.diag([-1.0, 1.0, 1.0]), Z3])
    assert linmap.distortion(linmap.orientation_normalize(L)).K == pytest.approx(1.0)
    assert linmap.classify_near_calibrated(L, 1e-3).dominating_index == 1


def test_sampler_outputs_satisfy_distortion_bound():
    rng = np.random.default_rng(5)
    mats, stats = linmap.sample_near_calibrated(rng, 3, 2, 1e-3, 2000)
    assert mats.shape == (2000, 6, 3) and stats.accepted == 2000
    st_ = linmap.block_stats(linmap.matrices_to_blocks(mats, 3))
    assert np.all(st_.K <= 1 + 1e-3)
    cb = linmap.classify_batch(mats, 3, 1e-3)
    assert cb.accepted.all() and cb.flag_a.all() and cb.flag_b.all() and cb.flag_c.all()


def test_sampler_small_eps_tends_to_single_conformal_block():
    L, _ = linmap.random_near_calibrated(3, 2, 1e-9, seed=1)
    norms = sorted(np.linalg.norm(L.blocks, ord=2, axis=(1, 2)))
    assert norms[0] / norms[1] < 1e-3
    big = L.blocks[int(np.argmax(np.linalg.norm(L.blocks, axis=(1, 2))))]
    assert linmap.conformality_defect(big) < 1e-6


def test_sampler_is_deterministic():
    a, _ = linmap.random_near_calibrated(3, 3, 1e-4, seed=9)
    b, _ = linmap.random_near_calibrated(3, 3, 1e-4, seed=9)
    assert a.matrix.tobytes() == b.matrix.tobytes()


def test_sampler_budget():
    with pytest.raises(linmap.SamplerExhausted):
        linmap.sample_near_calibrated(np.random.default_rng(0), 3, 2, 1e-3, 1000, max_attempts=10)


def test_perturbation_bound_examples():
    L = BlockLinearMap.from_blocks([rotation(6), Z3])
    res = linmap.perturbation_bound_check(L, L, 0.1)
    assert res["holds"] and res["distortion"].lhs == pytest.approx(1.0)
    assert linmap.perturbation_bound_value(3, 0.1) == pytest.approx(1.1 ** 3 / 0.2) == pytest.approx(6.655)


def test_perturbation_preconditions():
    L = BlockLinearMap.from_blocks([I3, I3])
    with pytest.raises(PreconditionError, match="not calibrated"):
        linmap.perturbation_bound_check(L, L, 0.01)
    C = BlockLinearMap.from_blocks([I3, Z3])
    with pytest.raises(PreconditionError, match="outside"):
        linmap.perturbation_bound_check(C, C, 0.2)
    R = BlockLinearMap(C.matrix + 0.5, 3, 2)
    with pytest.raises(PreconditionError, match="column perturbation"):
        linmap.perturbation_bound_check(C, R, 0.01)


def test_complex_dilatation_rigid_example():
    L = BlockLinearMap.from_blocks([np.eye(2), [[2.0, 0.0], [0.0, 0.0]]])
    rep = linmap.complex_dilatation_check(L, 5.0)
    assert rep.ratio == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert rep.minimal_premise_K == pytest.approx((math.sqrt(2) + 1) / (math.sqrt(2) - 1), abs=1e-12)
    assert not rep.premise and rep.conclusion.holds


def test_complex_dilatation_holomorphic():
    blocks = [linmap.block_from_wirtinger(1 + 2j, 0), linmap.block_from_wirtinger(-0.5j, 0)]
    rep = linmap.complex_dilatation_check(BlockLinearMap.from_blocks(blocks), 1.0)
    assert rep.premise and rep.conclusion.holds
    assert rep.conclusion.lhs == pytest.approx(rep.conclusion.rhs)


def test_complex_dilatation_needs_n2():
    with pytest.raises(PreconditionError):
        linmap.complex_dilatation_check(BlockLinearMap.from_blocks([I3]), 2.0)


@settings(max_examples=50, deadline=None)
@given(a=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       b=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_wirtinger_round_trip(a, b):
    block = linmap.block_from_wirtinger(a, b)
    a2, b2 = linmap.wirtinger_parts(block)
    assert a2 == pytest.approx(a, abs=1e-12) and b2 == pytest.approx(b, abs=1e-12)
    assert np.linalg.det(block) == pytest.approx(abs(a) ** 2 - abs(b) ** 2, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), k=st.integers(1, 4), scale=st.floats(1e-3, 1e3))
def test_distortion_is_scale_and_rotation_invariant(seed, k, scale):
    rng = np.random.default_rng(seed)
    blocks = rng.normal(size=(k, 3, 3))
    L = BlockLinearMap.from_blocks(blocks)
    K = linmap.distortion(L).K
    Q = linmap.random_rotation(rng, 3)
    rotated = BlockLinearMap.from_blocks(scale * blocks @ Q)
    K2 = linmap.distortion(rotated).K
    if math.isinf(K):
        assert math.isinf(K2) or K2 > 1e6
    else:
        assert K2 == pytest.approx(K, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), k=st.integers(1, 4))
def test_distortion_at_least_one_when_positive(seed, k):
    L = BlockLinearMap.from_blocks(np.random.default_rng(seed).normal(size=(k, 3, 3)))
    rep = linmap.distortion(L)
    if rep.pullback > 0:
        assert rep.K >= 1 - 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_block_stats_log_domain_matches_direct(seed):
    rng = np.random.default_rng(seed)
    blocks = rng.normal(size=(5, 2, 3, 3))
    shift = rng.uniform(-40, 40, size=(5, 3))
    st1 = linmap.block_stats(blocks, log2_colscale=shift)
    scaled = blocks * np.exp2(shift)[:, None, None, :]
    st2 = linmap.block_stats(scaled)
    fin = np.isfinite(st2.log2_K)
    assert np.array_equal(fin, np.isfinite(st1.log2_K))
    assert np.allclose(st1.log2_K[fin], st2.log2_K[fin], atol=1e-8)
    assert np.array_equal(st1.argmax_block, st2.argmax_block)
