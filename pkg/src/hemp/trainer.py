"""Entropy-regularized SGD training loop and evaluation.

Each step: loss gradients on the continuous weights, quantization against the
current codebooks, the insensitivity-weighted regularization gradient, then a
momentum SGD step on the sum. Codebooks are refit (warm-started Lloyd-Max)
every ``refit_every`` epochs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import codec
from .datasets import Dataset, Splits
from .entropy import proxy_entropy, true_entropy
from .lloyd import Codebook, IndexMap, fit_store_codebooks, quantize_store, reconstruct_store
from .mlp import DivergenceError, MlpSpec, forward_backward, init_params, loss_and_accuracy
from .params import ParamStore, group_tuples
from .regularizer import RegConfig, reconstruction_error, regularization_update
from .rng import rng_for

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e3
CSV_HEADER = ["epoch", "loss_w", "loss_wq", "acc_w", "acc_wq", "h_proxy", "h_true", "e_term", "est_bytes"]


@dataclass
class TrainConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 100
    epochs: int = 30
    seed: int = 0
    levels: int = 3
    reg: RegConfig = field(default_factory=RegConfig)
    refit_every: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1 or self.refit_every < 1:
            raise ValueError("batch_size, epochs and refit_every must be positive")
        if self.levels < 2:
            raise ValueError("need at least 2 quantization levels")


@dataclass
class EpochMetrics:
    epoch: int
    loss_w: float  # train loss, continuous weights
    loss_wq: float  # train loss, quantized weights
    acc_w: float  # test top-1, continuous
    acc_wq: float  # test top-1, quantized
    h_proxy: float  # bits per n-tuple
    h_true: float  # bits per n-tuple
    e_term: float
    est_bytes: int
    test_loss_w: float = float("nan")
    test_loss_wq: float = float("nan")

    def row(self) -> list:
        return [getattr(self, k) for k in CSV_HEADER]


@dataclass
class TrainResult:
    spec: MlpSpec
    store: ParamStore
    codebooks: list[Codebook]
    indices: IndexMap
    history: list[EpochMetrics]
    order: int

    def container(self) -> bytes:
        return codec.encode(
            self.indices,
            self.codebooks,
            self.order,
            names=[l.name for l in self.store.layers],
            shapes=[l.shape for l in self.store.layers],
        )

    def quantized_flat(self) -> np.ndarray:
        return reconstruct_store(self.indices, self.codebooks)


def evaluate(spec: MlpSpec, params, dataset: Dataset) -> tuple[float, float]:
    """(top-1 accuracy, mean cross-entropy) of a flat parameter vector or store."""
    loss, acc = loss_and_accuracy(spec, params, dataset.features, dataset.labels)
    return acc, loss


def epoch_metrics(
    epoch: int,
    spec: MlpSpec,
    store: ParamStore,
    codebooks: Sequence[Codebook],
    splits: Splits,
    order: int,
    indices: IndexMap | None = None,
) -> EpochMetrics:
    if indices is None:
        indices = quantize_store(store, codebooks)
    wq = reconstruct_store(indices, codebooks)
    view = group_tuples(store, order)
    loss_w, _ = loss_and_accuracy(spec, store.flat, splits.train.features, splits.train.labels)
    loss_wq, _ = loss_and_accuracy(spec, wq, splits.train.features, splits.train.labels)
    test_loss_w, acc_w = loss_and_accuracy(spec, store.flat, splits.test.features, splits.test.labels)
    test_loss_wq, acc_wq = loss_and_accuracy(spec, wq, splits.test.features, splits.test.labels)
    blob = codec.encode(indices, codebooks, order, shapes=[l.shape for l in store.layers])
    return EpochMetrics(
        epoch=epoch,
        loss_w=loss_w,
        loss_wq=loss_wq,
        acc_w=acc_w,
        acc_wq=acc_wq,
        h_proxy=proxy_entropy(store, codebooks, view),
        h_true=true_entropy(indices, view),
        e_term=reconstruction_error(store, codebooks, indices),
        est_bytes=len(blob),
        test_loss_w=test_loss_w,
        test_loss_wq=test_loss_wq,
    )


def train(
    spec: MlpSpec,
    splits: Splits,
    cfg: TrainConfig,
    store: ParamStore | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    if len(splits.train) == 0:
        raise ValueError("empty training set")
    if store is None:
        store = init_params(spec, cfg.seed)
    order = cfg.reg.order
    view = group_tuples(store, order)
    regularize = cfg.reg.lambda_h > 0 or cfg.reg.lambda_e > 0
    x_all, y_all = splits.train.features, splits.train.labels
    shuffle = rng_for(cfg.seed, "train.shuffle")

    codebooks = fit_store_codebooks(store, cfg.levels)
    history = [epoch_metrics(0, spec, store, codebooks, splits, order)]
    if on_epoch:
        on_epoch(history[-1])

    velocity = store.momentum
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle.permutation(len(y_all))
        for start in range(0, len(perm), cfg.batch_size):
            batch = perm[start : start + cfg.batch_size]
            loss, grad = forward_backward(spec, store, x_all[batch], y_all[batch])
            if loss > DIVERGENCE_LOSS:
                raise DivergenceError(f"loss {loss:.3g} exceeded {DIVERGENCE_LOSS:g} in epoch {epoch}")
            if regularize:
                indices = quantize_store(store, codebooks)
                grad = grad + regularization_update(store, codebooks, grad, cfg.reg, indices, view)
            velocity *= cfg.momentum
            velocity += grad
            store.flat -= cfg.lr * velocity
        store.check_finite()
        if epoch % cfg.refit_every == 0:
            codebooks = fit_store_codebooks(store, cfg.levels, previous=codebooks)
        history.append(epoch_metrics(epoch, spec, store, codebooks, splits, order))
        m = history[-1]
        log.info(
            "epoch %d loss %.4f/%.4f acc %.4f/%.4f H %.4f/%.4f E %.5f bytes %d",
            epoch, m.loss_w, m.loss_wq, m.acc_w, m.acc_wq, m.h_proxy, m.h_true, m.e_term, m.est_bytes,
        )
        if on_epoch:
            on_epoch(m)

    indices = quantize_store(store, codebooks)
    return TrainResult(spec, store, codebooks, indices, history, order)


def write_metrics_csv(history: Sequence[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for m in history:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in m.row()])


def save_checkpoint(path, result: TrainResult) -> None:
    """Continuous weights plus current codebooks, as a numpy .npz archive."""
    arrays = {f"w/{l.name}": l.array() for l in result.store.layers}
    arrays.update({f"cb/{l.name}": cb.levels for l, cb in zip(result.store.layers, result.codebooks)})
    arrays["meta/arch"] = np.array(result.spec.arch)
    arrays["meta/order"] = np.array(result.order)
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[MlpSpec, ParamStore, list[Codebook], int]:
    with np.load(path, allow_pickle=False) as z:
        spec = MlpSpec.parse(str(z["meta/arch"]))
        order = int(z["meta/order"])
        store = init_params(spec, 0)
        for layer in store.layers:
            layer.values[:] = z[f"w/{layer.name}"].reshape(-1)
        codebooks = [Codebook(l.layer_id, z[f"cb/{l.name}"]) for l in store.layers]
    return spec, store, codebooks, order


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
