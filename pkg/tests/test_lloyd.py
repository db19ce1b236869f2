import warnings

import numpy as np
import pytest

from hemp.lloyd import (
    Codebook,
    CollapsedCodebookWarning,
    IndexMap,
    fit_lloyd_max,
    quantize,
    reconstruct,
)


def kmeans_1d(x, centers, iters=500):
    """Plain k-means written independently of the library, as an oracle."""
    c = np.array(centers, dtype=np.float64)
    for _ in range(iters):
        labels = np.argmin(np.abs(x[:, None] - c[None, :]), axis=1)
        new = np.array([x[labels == k].mean() for k in range(c.size)])
        if np.max(np.abs(new - c)) < 1e-12:
            break
        c = new
    return np.sort(c)


def test_uniform_two_levels():
    x = np.random.default_rng(0).uniform(0, 1, 100_000)
    cb = fit_lloyd_max(x, 2)
    np.testing.assert_allclose(cb.levels, [0.25, 0.75], atol=1e-2)


def test_two_point_support_exact():
    x = np.repeat([-1.0, 1.0], 500)
    np.testing.assert_array_equal(fit_lloyd_max(x, 2).levels, [-1.0, 1.0])


def test_normal_matches_kmeans_oracle():
    x = np.random.default_rng(1).standard_normal(100_000)
    cb = fit_lloyd_max(x, 4, tol=1e-12, max_iter=1000)
    oracle = kmeans_1d(x, [-1.5, -0.5, 0.5, 1.5])
    np.testing.assert_allclose(cb.levels, oracle, atol=1e-3)
    # textbook Lloyd-Max levels for the unit Gaussian, N=4 (loose: sampling noise)
    np.testing.assert_allclose(cb.levels, [-1.510, -0.4528, 0.4528, 1.510], atol=5e-2)


def test_mse_history_monotone():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.standard_normal(500) * rng.uniform(0.1, 3) + rng.uniform(-1, 1)
        h = np.asarray(fit_lloyd_max(x, int(rng.integers(2, 9))).mse_history)
        assert np.all(np.diff(h) <= 1e-12 * np.maximum(h[:-1], 1))


def test_quantize_examples():
    cb = Codebook(0, np.array([-1.0, 0.0, 1.0]))
    assert quantize([0.4], cb)[0] == 2
    cb01 = Codebook(0, np.array([0.0, 1.0]))
    assert quantize([0.5], cb01)[0] == 1  # tie goes low
    assert quantize([5.0], cb01)[0] == 2
    assert quantize([-5.0], cb01)[0] == 1


def test_reconstruct_examples():
    cb = Codebook(0, np.array([-0.5, 0.5]))
    np.testing.assert_array_equal(reconstruct([1, 2], cb), [-0.5, 0.5])
    np.testing.assert_array_equal(reconstruct([1, 1, 1], cb), [-0.5] * 3)
    with pytest.raises(ValueError):
        reconstruct([3], cb)


def test_quantize_idempotent():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(1000)
    cb = fit_lloyd_max(x, 5)
    idx = quantize(x, cb)
    np.testing.assert_array_equal(quantize(reconstruct(idx, cb), cb), idx)


def test_codebook_validation():
    with pytest.raises(ValueError):
        Codebook(0, np.array([1.0]))
    with pytest.raises(ValueError):
        Codebook(0, np.array([0.0, 0.0, 1.0]))


def test_too_few_distinct_values_collapses():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cb = fit_lloyd_max(np.array([0.0, 1.0, 1.0, 0.0]), 4)
    assert cb.collapsed
    assert any(issubclass(w.category, CollapsedCodebookWarning) for w in caught)
    assert np.all(np.diff(cb.levels) > 0)
    with pytest.raises(ValueError):
        fit_lloyd_max(np.ones(10), 2)


def test_levels_on_float32_grid():
    cb = fit_lloyd_max(np.random.default_rng(4).standard_normal(300), 3)
    np.testing.assert_array_equal(cb.levels, cb.levels.astype(np.float32).astype(np.float64))


def test_warm_start_converges_to_same_fixed_point():
    x = np.random.default_rng(5).standard_normal(2000)
    cold = fit_lloyd_max(x, 3, tol=1e-12, max_iter=1000)
    warm = fit_lloyd_max(x, 3, tol=1e-12, max_iter=1000, init=cold.levels + 0.01)
    np.testing.assert_allclose(warm.levels, cold.levels, atol=1e-5)


def test_indexmap_equality():
    assert IndexMap([np.array([1, 2])]) == IndexMap([np.array([1, 2])])
    assert IndexMap([np.array([1, 2])]) != IndexMap([np.array([2, 1])])
