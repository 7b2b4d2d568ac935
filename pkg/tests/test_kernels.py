import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrcurves import _kernels_py, kernels

BACKENDS = kernels.available_backends()


def test_fallback_always_available():
    assert "numpy" in BACKENDS
    assert kernels.BACKEND in BACKENDS


def test_env_var_forces_fallback():
    env = dict(os.environ, QRCURVES_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from qrcurves import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True).stdout.strip()
    assert out == "numpy"


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_dets_against_lapack(name, n):
    m = np.random.default_rng(n).normal(size=(7, 11, n, n))
    got = BACKENDS[name].dets(m)
    assert got.shape == (7, 11)
    assert np.allclose(got, np.linalg.det(m), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("n", [1, 2, 3, 4, 6])
def test_sym_eigvals_against_lapack(name, n):
    a = np.random.default_rng(n).normal(size=(200, n, n))
    g = a @ a.transpose(0, 2, 1)
    assert np.allclose(BACKENDS[name].sym_eigvals(g), np.linalg.eigvalsh(g), rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_sym_eigvals_degenerate(name):
    g = np.stack([np.eye(3), np.zeros((3, 3)), np.diag([2.0, 2.0, 5.0])])
    assert np.allclose(BACKENDS[name].sym_eigvals(g), [[1, 1, 1], [0, 0, 0], [2, 2, 5]], atol=1e-12)


@pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 4), R=st.integers(1, 5))
def test_block_stats_backends_agree(seed, n, R):
    rng = np.random.default_rng(seed)
    blocks = rng.normal(size=(20, R, n, n))
    weights = rng.integers(0, 4, size=(20, R)).astype(float)
    colscale = np.exp2(rng.uniform(-10, 10, size=(20, n)))
    py = _kernels_py.block_stats(blocks, weights, colscale)
    cy = BACKENDS["cython"].block_stats(blocks, weights, colscale)
    for a, b in zip(py, cy):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12 * np.abs(a).max())


def test_block_stats_reference():
    # a single identity block scaled by 2 has Gram max 4 and determinant 1
    blocks = np.eye(3)[None, None]
    for mod in BACKENDS.values():
        gm, ds, bgm, bd = mod.block_stats(blocks, np.array([[3.0]]), np.full((1, 3), 2.0))
        assert gm[0] == pytest.approx(12.0) and ds[0] == pytest.approx(3.0)
        assert bgm[0, 0] == pytest.approx(4.0) and bd[0, 0] == pytest.approx(1.0)
