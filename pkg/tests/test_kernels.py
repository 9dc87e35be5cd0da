"""Compiled scatter/gather kernels against their numpy fallbacks."""

import numpy as np
import pytest

from hlsdse import kernels as K


def _rand(rng, *shape):
    return np.ascontiguousarray(rng.normal(0.0, 1.0, size=shape))


@pytest.mark.parametrize("seed", range(5))
def test_scatter_add_rows_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 6, size=40).astype(np.int64)
    src = _rand(rng, 40, 7)
    a = np.zeros((6, 7))
    b = np.zeros((6, 7))
    K.scatter_add_rows(a, idx, src)
    K.scatter_add_rows_numpy(b, idx, src)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gather_rows_add_matches_numpy(seed):
    rng = np.random.default_rng(seed + 10)
    idx = rng.integers(0, 6, size=40).astype(np.int64)
    src = _rand(rng, 6, 7)
    a = np.zeros((40, 7))
    b = np.zeros((40, 7))
    K.gather_rows_add(a, idx, src)
    K.gather_rows_add_numpy(b, idx, src)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_segment_max_rows_matches_numpy(seed):
    rng = np.random.default_rng(seed + 20)
    seg = np.sort(rng.integers(0, 5, size=30)).astype(np.int64)
    src = _rand(rng, 30, 4)
    a = np.full((5, 4), -np.inf)
    b = np.full((5, 4), -np.inf)
    K.segment_max_rows(a, seg, src)
    K.segment_max_rows_numpy(b, seg, src)
    np.testing.assert_allclose(a, b, rtol=0, atol=0)


@pytest.mark.parametrize("seed", range(5))
def test_gather2_add_matches_numpy(seed):
    rng = np.random.default_rng(seed + 30)
    ia = rng.integers(0, 8, size=25).astype(np.int64)
    ib = rng.integers(0, 6, size=25).astype(np.int64)
    a, b, c = _rand(rng, 8, 5), _rand(rng, 6, 5), _rand(rng, 25, 5)
    np.testing.assert_allclose(
        K.gather2_add(a, b, c, ia, ib), K.gather2_add_numpy(a, b, c, ia, ib), rtol=0, atol=1e-12
    )


@pytest.mark.parametrize("seed", range(5))
def test_scatter2_add_rows_matches_numpy(seed):
    rng = np.random.default_rng(seed + 40)
    ia = rng.integers(0, 8, size=25).astype(np.int64)
    ib = rng.integers(0, 6, size=25).astype(np.int64)
    g = _rand(rng, 25, 5)
    ga, gb = np.zeros((8, 5)), np.zeros((6, 5))
    ga2, gb2 = np.zeros((8, 5)), np.zeros((6, 5))
    K.scatter2_add_rows(ga, gb, ia, ib, g)
    K.scatter2_add_rows_numpy(ga2, gb2, ia, ib, g)
    np.testing.assert_allclose(ga, ga2, rtol=0, atol=1e-12)
    np.testing.assert_allclose(gb, gb2, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_weighted_gather_scatter_matches_numpy(seed):
    rng = np.random.default_rng(seed + 50)
    E, N, d = 30, 7, 4
    src = rng.integers(0, N, size=E).astype(np.int64)
    dst = rng.integers(0, N, size=E).astype(np.int64)
    alpha = np.ascontiguousarray(rng.uniform(0.1, 1.0, size=(E, 1)))
    values = _rand(rng, N, d)
    a = np.zeros((N, d))
    b = np.zeros((N, d))
    K.weighted_gather_scatter(a, alpha, values, src, dst)
    K.weighted_gather_scatter_numpy(b, alpha, values, src, dst)
    np.testing.assert_allclose(a, b, rtol=1e-15, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_weighted_gather_scatter_bwd_matches_numpy(seed):
    rng = np.random.default_rng(seed + 60)
    E, N, d = 30, 7, 4
    src = rng.integers(0, N, size=E).astype(np.int64)
    dst = rng.integers(0, N, size=E).astype(np.int64)
    alpha = np.ascontiguousarray(rng.uniform(0.1, 1.0, size=(E, 1)))
    values = _rand(rng, N, d)
    g = _rand(rng, N, d)
    ga, gv = np.empty((E, 1)), np.zeros((N, d))
    ga2, gv2 = np.empty((E, 1)), np.zeros((N, d))
    K.weighted_gather_scatter_bwd(ga, gv, alpha, values, src, dst, g)
    K.weighted_gather_scatter_bwd_numpy(ga2, gv2, alpha, values, src, dst, g)
    np.testing.assert_allclose(ga, ga2, rtol=1e-15, atol=1e-12)
    np.testing.assert_allclose(gv, gv2, rtol=1e-15, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_leaky_matches_numpy_semantics(seed):
    rng = np.random.default_rng(seed + 70)
    x = _rand(rng, 9, 6)
    g = _rand(rng, 9, 6)
    fwd = K.leaky_forward(x, 0.2)
    np.testing.assert_allclose(fwd, np.where(x > 0, x, 0.2 * x), rtol=0, atol=0)
    bwd = K.leaky_backward(x, g, 0.2)
    np.testing.assert_allclose(bwd, np.where(x > 0, g, 0.2 * g), rtol=0, atol=0)


def test_backend_name_reports_mode():
    assert K.backend_name() in ("compiled", "numpy")
