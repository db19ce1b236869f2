"""Layered parameter storage and the canonical flattening / n-uple grouping.

All layers live in one contiguous float64 buffer; each ``LayerParams.values``
is a view into it, so an in-place update of ``ParamStore.flat`` is seen by
every layer and vice versa.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Sequence

import numpy as np


@dataclass
class LayerParams:
    layer_id: int
    name: str
    shape: tuple[int, ...]
    values: np.ndarray
    momentum_buffer: np.ndarray
    # Layers sharing a group share one codebook (e.g. a bias with its weight).
    group: str = ""

    @property
    def size(self) -> int:
        return int(self.values.size)

    def array(self) -> np.ndarray:
        """Values reshaped to the layer shape (a view, writes propagate)."""
        return self.values.reshape(self.shape)


class ParamStore:
    """Ordered collection of layers backed by a single flat buffer."""

    def __init__(self, layers: Sequence[tuple[str, Sequence[int], np.ndarray]], groups: Sequence[str] | None = None):
        shapes = []
        for name, shape, vals in layers:
            shape = tuple(int(s) for s in shape)
            if any(s <= 0 for s in shape):
                raise ValueError(f"layer {name!r}: shape dims must be positive, got {shape}")
            vals = np.asarray(vals, dtype=np.float64)
            if vals.size != prod(shape):
                raise ValueError(f"layer {name!r}: {vals.size} values for shape {shape}")
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"layer {name!r}: non-finite values")
            shapes.append(shape)

        sizes = [prod(s) for s in shapes]
        self.flat = np.zeros(sum(sizes), dtype=np.float64)
        self.momentum = np.zeros_like(self.flat)
        self.layers: list[LayerParams] = []
        self._offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        for lid, ((name, _, vals), shape) in enumerate(zip(layers, shapes)):
            sl = self.layer_slice(lid)
            self.flat[sl] = np.asarray(vals, dtype=np.float64).reshape(-1)
            group = groups[lid] if groups is not None else name
            self.layers.append(
                LayerParams(lid, name, shape, self.flat[sl], self.momentum[sl], group)
            )

    @property
    def total_count(self) -> int:
        return int(self.flat.size)

    def layer_slice(self, layer_id: int) -> slice:
        return slice(int(self._offsets[layer_id]), int(self._offsets[layer_id + 1]))

    def layer_of_position(self) -> np.ndarray:
        """Layer id for every flat position."""
        return np.repeat(np.arange(len(self.layers)), np.diff(self._offsets))

    def groups(self) -> list[str]:
        """Distinct codebook groups in first-appearance order."""
        return list(dict.fromkeys(layer.group for layer in self.layers))

    def copy(self) -> "ParamStore":
        new = ParamStore(
            [(l.name, l.shape, l.values.copy()) for l in self.layers],
            [l.group for l in self.layers],
        )
        new.momentum[:] = self.momentum
        return new

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.flat)):
            bad = [l.name for l in self.layers if not np.all(np.isfinite(l.values))]
            raise FloatingPointError(f"non-finite parameters in layers {bad}")

    def __len__(self) -> int:
        return len(self.layers)

    def __repr__(self) -> str:
        desc = ", ".join(f"{l.name}{list(l.shape)}" for l in self.layers)
        return f"ParamStore({desc}; total={self.total_count})"


@dataclass
class TupleView:
    """Consecutive non-overlapping n-uples over the flattened parameter order."""

    order: int
    tuples: np.ndarray  # (num_tuples, order) flat positions
    remainder: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def num_tuples(self) -> int:
        return int(self.tuples.shape[0])

    @property
    def covered(self) -> int:
        """Number of parameters that belong to some tuple."""
        return self.num_tuples * self.order


def flatten_order(store: ParamStore) -> list[tuple[int, int]]:
    """(layer_id, offset) for every parameter: layers in order, row-major inside."""
    return [(layer.layer_id, off) for layer in store.layers for off in range(layer.size)]


def group_tuples(store_or_count: ParamStore | int, n: int) -> TupleView:
    """Partition flat positions into blocks of ``n``; the tail goes to ``remainder``."""
    if n < 1:
        raise ValueError(f"tuple order must be >= 1, got {n}")
    total = store_or_count if isinstance(store_or_count, int) else store_or_count.total_count
    num = total // n
    positions = np.arange(total, dtype=np.int64)
    return TupleView(
        order=n,
        tuples=positions[: num * n].reshape(num, n),
        remainder=positions[num * n :],
    )
