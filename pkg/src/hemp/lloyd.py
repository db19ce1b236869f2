"""Non-uniform scalar (Lloyd-Max) quantization with 1-based indices."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class CollapsedCodebookWarning(UserWarning):
    """Fewer distinct values than requested levels; the codebook was shrunk."""


@dataclass
class Codebook:
    layer_id: int
    levels: np.ndarray
    collapsed: bool = False
    mse_history: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.float64).reshape(-1)
        if self.levels.size < 2:
            raise ValueError("a codebook needs at least 2 levels")
        if not np.all(np.isfinite(self.levels)):
            raise ValueError("codebook levels must be finite")
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError(f"codebook levels must be strictly increasing: {self.levels}")

    @property
    def level_count(self) -> int:
        return int(self.levels.size)

    def __eq__(self, other):
        if not isinstance(other, Codebook):
            return NotImplemented
        return self.layer_id == other.layer_id and np.array_equal(self.levels, other.levels)


@dataclass
class IndexMap:
    """Per-layer integer quantization indices in [1, N]."""

    layers: list[np.ndarray]

    def flat(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.asarray(a, dtype=np.int64).reshape(-1) for a in self.layers])

    def __len__(self) -> int:
        return len(self.layers)

    def __eq__(self, other):
        if not isinstance(other, IndexMap):
            return NotImplemented
        return len(self.layers) == len(other.layers) and all(
            np.array_equal(a, b) for a, b in zip(self.layers, other.layers)
        )


def _nearest(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # 0-based nearest level; a value exactly on a decision threshold goes to the lower level
    thresholds = 0.5 * (levels[:-1] + levels[1:])
    return np.searchsorted(thresholds, values, side="left")


def _to_float32_grid(levels: np.ndarray) -> np.ndarray:
    """Round to float32 so that serialized codebooks reproduce training exactly."""
    out = levels.astype(np.float32).astype(np.float64)
    for k in range(1, out.size):
        if out[k] <= out[k - 1]:
            out[k] = float(np.nextafter(np.float32(out[k - 1]), np.float32(np.inf)))
    return out


def fit_lloyd_max(
    values,
    n_levels: int,
    tol: float = 1e-8,
    max_iter: int = 100,
    init: Sequence[float] | None = None,
    layer_id: int = 0,
) -> Codebook:
    """Fit an MSE-optimal scalar codebook by alternating assignment and centroid steps.

    ``init`` warm-starts from previous levels; by default levels start at the
    empirical quantiles (k + 0.5) / N. The per-iteration MSE of nearest-level
    quantization is recorded on ``Codebook.mse_history``.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if n_levels < 2:
        raise ValueError("n_levels must be >= 2")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise ValueError("values must be a non-empty finite vector")

    distinct = np.unique(x)
    if distinct.size < 2:
        raise ValueError("cannot build a codebook from a single distinct value")
    if distinct.size <= n_levels:
        if distinct.size < n_levels:
            warnings.warn(
                f"only {distinct.size} distinct values for {n_levels} levels; codebook collapsed",
                CollapsedCodebookWarning,
                stacklevel=2,
            )
        return Codebook(layer_id, distinct, collapsed=distinct.size < n_levels, mse_history=[0.0])

    if init is not None and len(init) == n_levels:
        levels = np.sort(np.asarray(init, dtype=np.float64))
        if np.any(np.diff(levels) <= 0):
            levels = np.quantile(x, (np.arange(n_levels) + 0.5) / n_levels)
    else:
        levels = np.quantile(x, (np.arange(n_levels) + 0.5) / n_levels)
    levels = _repair(levels, x)

    history: list[float] = []
    for _ in range(max_iter):
        cells = _nearest(x, levels)
        mse = float(np.mean((x - levels[cells]) ** 2))
        if history and (history[-1] - mse) < tol * max(history[-1], 1e-300):
            history.append(mse)
            break
        history.append(mse)
        counts = np.bincount(cells, minlength=n_levels)
        sums = np.bincount(cells, weights=x, minlength=n_levels)
        occupied = counts > 0
        new = levels.copy()
        new[occupied] = sums[occupied] / counts[occupied]
        levels = _repair(new, x, occupied)

    # Final levels are put on the float32 grid used by the container format.
    levels = _to_float32_grid(levels)
    return Codebook(layer_id, levels, mse_history=history)


def _repair(levels: np.ndarray, x: np.ndarray, occupied: np.ndarray | None = None) -> np.ndarray:
    """Keep N distinct sorted levels; empty cells move to the widest gap's midpoint."""
    n = levels.size
    if occupied is None:
        occupied = np.ones(n, dtype=bool)
        levels = np.sort(levels)
        _, first = np.unique(levels, return_index=True)
        occupied[:] = False
        occupied[first] = True
    live = np.sort(levels[occupied])
    while live.size < n:
        if live.size == 1:
            # everything sits on one centroid: spread toward the data extremes
            extra = x[-1] if x[-1] > live[0] else x[0]
            live = np.sort(np.append(live, 0.5 * (live[0] + extra)))
            continue
        gaps = np.diff(live)
        k = int(np.argmax(gaps))
        live = np.sort(np.append(live, 0.5 * (live[k] + live[k + 1])))
    return live


def quantize(values, codebook: Codebook) -> np.ndarray:
    """Nearest-level 1-based indices; ties go to the lower index, outliers clamp."""
    return _nearest(np.asarray(values, dtype=np.float64), codebook.levels).astype(np.int64) + 1


def reconstruct(indices, codebook: Codebook) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 1 or idx.max() > codebook.level_count):
        raise ValueError(f"indices must lie in [1, {codebook.level_count}]")
    return codebook.levels[idx - 1]


def quantize_store(store, codebooks: Sequence[Codebook]) -> IndexMap:
    return IndexMap([quantize(layer.values, cb) for layer, cb in zip(store.layers, codebooks)])


def reconstruct_store(indices: IndexMap, codebooks: Sequence[Codebook]) -> np.ndarray:
    """Flat vector of reconstructed values in store order."""
    parts = [reconstruct(idx, cb) for idx, cb in zip(indices.layers, codebooks)]
    return np.concatenate(parts) if parts else np.zeros(0)


def fit_store_codebooks(
    store,
    n_levels: int,
    previous: Sequence[Codebook] | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> list[Codebook]:
    """One codebook per group, fitted on the pooled values of its layers.

    Returns a list aligned with ``store.layers``; layers of one group share a
    Codebook object.
    """
    by_group: dict[str, Codebook] = {}
    for group in store.groups():
        members = [l for l in store.layers if l.group == group]
        pooled = np.concatenate([l.values for l in members])
        init = None
        if previous is not None:
            init = previous[members[0].layer_id].levels
        by_group[group] = fit_lloyd_max(
            pooled, n_levels, tol=tol, max_iter=max_iter, init=init, layer_id=members[0].layer_id
        )
    return [by_group[l.group] for l in store.layers]
