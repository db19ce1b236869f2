"""Soft bin membership of continuous parameters.

The two-neighbour linear model is what training uses; the softmax model over
all levels is only a reference for tests and diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lloyd import Codebook


@dataclass(frozen=True)
class BinAssignment:
    q_minus: int
    q_plus: int
    delta: float
    p_minus: float
    p_plus: float

    @property
    def clamped(self) -> bool:
        return self.q_minus == self.q_plus


@dataclass
class NeighborArrays:
    """Vectorised ``BinAssignment`` over many parameters (indices are 1-based)."""

    q_minus: np.ndarray
    q_plus: np.ndarray
    delta: np.ndarray
    p_minus: np.ndarray
    p_plus: np.ndarray
    clamped: np.ndarray

    def __len__(self) -> int:
        return int(self.q_minus.size)

    def item(self, i: int) -> BinAssignment:
        return BinAssignment(
            int(self.q_minus[i]),
            int(self.q_plus[i]),
            float(self.delta[i]),
            float(self.p_minus[i]),
            float(self.p_plus[i]),
        )


def neighbor_arrays(values, levels) -> NeighborArrays:
    """Bracketing bins and linear membership for every value.

    Intervals are half-open [r(k), r(k+1)) except the last one, which is
    closed so that w = r(N) gets p_plus = 1. Values outside [r(1), r(N)] are
    clamped: q_minus = q_plus = nearest extreme, p_minus = 1, and delta is
    the width of the adjacent interval.
    """
    w = np.asarray(values, dtype=np.float64).reshape(-1)
    r = np.asarray(levels, dtype=np.float64)
    n = r.size
    k = np.clip(np.searchsorted(r, w, side="right") - 1, 0, n - 2)
    lo = r[k]
    hi = r[k + 1]
    delta = hi - lo
    p_plus = (w - lo) / delta
    p_minus = 1.0 - p_plus

    below = w < r[0]
    above = w > r[-1]
    clamped = below | above
    q_minus = k + 1
    q_plus = k + 2
    if np.any(clamped):
        q_minus = np.where(below, 1, np.where(above, n, q_minus))
        q_plus = np.where(below, 1, np.where(above, n, q_plus))
        p_minus = np.where(clamped, 1.0, p_minus)
        p_plus = np.where(clamped, 0.0, p_plus)
    return NeighborArrays(
        q_minus.astype(np.int64), q_plus.astype(np.int64), delta, p_minus, p_plus, clamped
    )


def assign_neighbors(w: float, codebook: Codebook) -> BinAssignment:
    return neighbor_arrays([w], codebook.levels).item(0)


def store_neighbors(store, codebooks: Sequence[Codebook]) -> NeighborArrays:
    """Neighbour assignment for every flat parameter, each against its layer codebook."""
    parts = [neighbor_arrays(layer.values, cb.levels) for layer, cb in zip(store.layers, codebooks)]
    if not parts:
        empty = np.zeros(0)
        return NeighborArrays(empty.astype(np.int64), empty.astype(np.int64), empty, empty, empty, empty.astype(bool))
    return NeighborArrays(
        *(np.concatenate([getattr(p, f) for p in parts]) for f in ("q_minus", "q_plus", "delta", "p_minus", "p_plus", "clamped"))
    )


def softmax_probs(w: float, codebook: Codebook) -> np.ndarray:
    """exp(-|w - r(k)|) normalised over all N levels."""
    d = np.abs(float(w) - codebook.levels)
    z = np.exp(-(d - d.min()))
    return z / z.sum()
