import numpy as np
import pytest

from hemp.datasets import Dataset, synth_splits
from hemp.mlp import DivergenceError, MlpSpec, forward_backward, init_params, loss_and_accuracy, spec_from_shapes
from hemp.regularizer import RegConfig
from hemp.rng import rng_for
from hemp.trainer import (
    CSV_HEADER,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
)


def numeric_grad(spec, flat, x, y, h=1e-6):
    g = np.zeros_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (loss_and_accuracy(spec, up, x, y)[0] - loss_and_accuracy(spec, dn, x, y)[0]) / (2 * h)
    return g


@pytest.mark.parametrize("arch", ["4x3", "5x4x3", "3x4x4x2"])
def test_backprop_matches_fd(arch):
    spec = MlpSpec.parse(arch)
    rng = np.random.default_rng(0)
    flat = init_params(spec, 1).flat.copy()
    x = rng.standard_normal((8, spec.layer_widths[0]))
    y = rng.integers(0, spec.layer_widths[-1], 8)
    _, g = forward_backward(spec, flat, x, y)
    np.testing.assert_allclose(g, numeric_grad(spec, flat, x, y), rtol=1e-5, atol=1e-8)


def test_zero_weights_give_log_ten():
    spec = MlpSpec.parse("6x5x10")
    x = np.random.default_rng(0).standard_normal((20, 6))
    loss, _ = forward_backward(spec, np.zeros(init_params(spec, 0).total_count), x, np.arange(20) % 10)
    assert loss == pytest.approx(np.log(10.0))


def test_duplicated_sample_doubles_its_contribution():
    spec = MlpSpec.parse("3x4x2")
    flat = init_params(spec, 0).flat.copy()
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((2, 3)), np.array([0, 1])
    _, g_a = forward_backward(spec, flat, x[:1], y[:1])
    _, g_b = forward_backward(spec, flat, x[1:], y[1:])
    _, g_dup = forward_backward(spec, flat, x[[0, 0, 1]], y[[0, 0, 1]])
    np.testing.assert_allclose(3 * g_dup, 2 * g_a + g_b, rtol=1e-12, atol=1e-15)


def test_nonfinite_loss_raises():
    spec = MlpSpec.parse("2x2")
    with pytest.raises(DivergenceError), np.errstate(invalid="ignore"):
        forward_backward(spec, np.array([np.inf, 0, 0, 0, 0, 0]), np.ones((1, 2)), np.array([0]))


def test_arch_parsing():
    assert MlpSpec.parse("784x32x10").layer_widths == (784, 32, 10)
    assert spec_from_shapes([(784, 32), (32,), (32, 10), (10,)]).arch == "784x32x10"
    with pytest.raises(ValueError):
        MlpSpec.parse("784")
    with pytest.raises(ValueError):
        MlpSpec.parse("10xfoo")


def plain_sgd(spec, splits, cfg):
    """Reference run: momentum SGD with no regularizer and no quantization."""
    store = init_params(spec, cfg.seed)
    v = np.zeros_like(store.flat)
    shuffle = rng_for(cfg.seed, "train.shuffle")
    x, y = splits.train.features, splits.train.labels
    for _ in range(cfg.epochs):
        perm = shuffle.permutation(len(y))
        for s in range(0, len(perm), cfg.batch_size):
            b = perm[s : s + cfg.batch_size]
            _, g = forward_backward(spec, store.flat, x[b], y[b])
            v = cfg.momentum * v + g
            store.flat[:] = store.flat - cfg.lr * v
    return store.flat


def test_zero_lambdas_bitwise_equal_plain_sgd():
    spec = MlpSpec.parse("16x8x10")
    splits = synth_splits(per_class=20, dim=16, seed=3)
    cfg = TrainConfig(lr=0.05, epochs=3, batch_size=32, seed=5, reg=RegConfig(lambda_h=0.0, lambda_e=0.0, order=2))
    result = train(spec, splits, cfg)
    assert result.store.flat.tobytes() == plain_sgd(spec, splits, cfg).tobytes()


def test_training_is_reproducible_and_logs_every_epoch():
    spec = MlpSpec.parse("16x8x10")
    splits = synth_splits(per_class=20, dim=16, seed=3)
    cfg = TrainConfig(lr=0.05, epochs=3, seed=2, reg=RegConfig(order=2))
    a, b = train(spec, splits, cfg), train(spec, splits, cfg)
    assert a.container() == b.container()
    assert [m.epoch for m in a.history] == [0, 1, 2, 3]
    assert all(m.est_bytes > 0 for m in a.history)


def test_entropy_regularizer_lowers_true_entropy():
    spec = MlpSpec.parse("16x8x10")
    splits = synth_splits(per_class=30, dim=16, seed=4)
    base = train(spec, splits, TrainConfig(lr=0.05, epochs=8, seed=0, reg=RegConfig(lambda_h=0.0, lambda_e=0.0, order=2)))
    reg = train(spec, splits, TrainConfig(lr=0.05, epochs=8, seed=0, reg=RegConfig(lambda_h=1.0, lambda_e=0.1, order=2)))
    assert reg.history[-1].h_true < base.history[-1].h_true


def test_divergence_detected():
    spec = MlpSpec.parse("16x8x10")
    splits = synth_splits(per_class=20, dim=16, seed=3)
    splits.train.images *= 1e4
    with pytest.raises(DivergenceError):
        train(spec, splits, TrainConfig(lr=10.0, epochs=5, reg=RegConfig(lambda_h=0, lambda_e=0)))


def test_eval_deterministic_and_chance_on_random_labels():
    spec = MlpSpec.parse("20x16x10")
    rng = np.random.default_rng(9)
    ds = Dataset(rng.standard_normal((1000, 1, 20)), rng.integers(0, 10, 1000), 10)
    store = init_params(spec, 0)
    assert evaluate(spec, store, ds) == evaluate(spec, store, ds)
    acc, _ = evaluate(spec, store, ds)
    assert abs(acc - 0.1) <= 0.03


def test_checkpoint_and_csv(tmp_path):
    spec = MlpSpec.parse("16x8x10")
    res = train(spec, synth_splits(per_class=10, dim=16, seed=1), TrainConfig(epochs=1, reg=RegConfig(order=2)))
    save_checkpoint(tmp_path / "c.npz", res)
    spec2, store, cbs, order = load_checkpoint(tmp_path / "c.npz")
    assert spec2 == spec and order == 2
    np.testing.assert_array_equal(store.flat, res.store.flat)
    write_metrics_csv(res.history, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].split(",") == CSV_HEADER and len(lines) == 3


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(levels=1)
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
