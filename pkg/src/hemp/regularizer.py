"""Training-time regularization: lambda_H * H_n + lambda_E * E, re-weighted
per parameter by the loss insensitivity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .entropy import proxy_entropy_and_gradient
from .lloyd import Codebook, IndexMap, quantize_store, reconstruct_store
from .params import ParamStore, TupleView, group_tuples


@dataclass
class RegConfig:
    lambda_h: float = 1.0
    lambda_e: float = 0.1
    order: int = 1
    # "layer": max |dL/dw| taken per layer; "global": over all parameters
    insensitivity_scope: str = "layer"
    reweight: bool = True

    def __post_init__(self):
        if self.lambda_h < 0 or self.lambda_e < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.order < 1:
            raise ValueError("entropy order must be >= 1")
        if self.insensitivity_scope not in ("layer", "global"):
            raise ValueError(f"unknown insensitivity scope {self.insensitivity_scope!r}")


def reconstruction_error(store: ParamStore, codebooks: Sequence[Codebook], indices: IndexMap | None = None) -> float:
    """RMS distance between parameters and their quantized reconstructions."""
    if indices is None:
        indices = quantize_store(store, codebooks)
    diff = store.flat - reconstruct_store(indices, codebooks)
    return float(np.sqrt(np.mean(diff**2)))


def reconstruction_gradient(
    store: ParamStore, codebooks: Sequence[Codebook], indices: IndexMap | None = None
) -> np.ndarray:
    """(w - w_hat) / (|W| E), with indices held fixed; zero where E == 0."""
    if indices is None:
        indices = quantize_store(store, codebooks)
    diff = store.flat - reconstruct_store(indices, codebooks)
    e = float(np.sqrt(np.mean(diff**2)))
    if e == 0.0:
        return np.zeros_like(diff)
    return diff / (diff.size * e)


def insensitivity(loss_grads, slices: Sequence[slice] | None = None) -> np.ndarray:
    """1 - |g| / max|g|, computed within each slice (one slice per layer).

    A slice whose gradients are all zero gets insensitivity 1.
    """
    g = np.abs(np.asarray(loss_grads, dtype=np.float64))
    out = np.ones_like(g)
    for sl in slices if slices is not None else [slice(None)]:
        peak = g[sl].max() if g[sl].size else 0.0
        if peak > 0:
            out[sl] = 1.0 - g[sl] / peak
    return out


def regularization_update(
    store: ParamStore,
    codebooks: Sequence[Codebook],
    loss_grads,
    cfg: RegConfig,
    indices: IndexMap | None = None,
    view: TupleView | None = None,
) -> np.ndarray:
    """Per-parameter regularization gradient to be added to the loss gradient."""
    update, _ = regularization_terms(store, codebooks, loss_grads, cfg, indices, view)
    return update


def regularization_terms(
    store: ParamStore,
    codebooks: Sequence[Codebook],
    loss_grads,
    cfg: RegConfig,
    indices: IndexMap | None = None,
    view: TupleView | None = None,
) -> tuple[np.ndarray, dict]:
    """Like ``regularization_update`` but also returns the proxy and E values."""
    if indices is None:
        indices = quantize_store(store, codebooks)
    if view is None:
        view = group_tuples(store, cfg.order)
    grad = np.zeros(store.total_count)
    info = {"h_proxy": float("nan"), "e_term": reconstruction_error(store, codebooks, indices)}
    if cfg.lambda_h > 0 and view.num_tuples > 0:
        h, dh = proxy_entropy_and_gradient(store, codebooks, view)
        info["h_proxy"] = h
        grad += cfg.lambda_h * dh
    if cfg.lambda_e > 0:
        grad += cfg.lambda_e * reconstruction_gradient(store, codebooks, indices)
    if cfg.reweight:
        if cfg.insensitivity_scope == "layer":
            slices = [store.layer_slice(l.layer_id) for l in store.layers]
        else:
            slices = None
        grad *= insensitivity(loss_grads, slices)
    return grad, info
