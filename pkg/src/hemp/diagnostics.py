"""Numerical checks of the entropy machinery.

``reference_proxy_entropy`` is a deliberately naive transcription of the
proxy: dense N-way membership per parameter, full N**n enumeration per
tuple, and the bracketed-log form of the objective, evaluated in extended precision. It shares no code with
the vectorised engine and serves as the finite-difference oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .binning import store_neighbors
from .entropy import gradient_bound, proxy_entropy_and_gradient, stationary_position, true_entropy, proxy_entropy
from .lloyd import Codebook, quantize_store
from .params import ParamStore, group_tuples


def dense_membership(w: float, levels: np.ndarray) -> np.ndarray:
    """Two-neighbour linear membership over all N levels (clamped outside)."""
    w = np.longdouble(w)
    levels = np.asarray(levels, dtype=np.longdouble)
    p = np.zeros(levels.size, dtype=np.longdouble)
    if w <= levels[0]:
        p[0] = 1.0
        return p
    if w >= levels[-1]:
        p[-1] = 1.0
        return p
    k = int(np.searchsorted(levels, w, side="right")) - 1
    d = levels[k + 1] - levels[k]
    p[k] = 1.0 - (w - levels[k]) / d
    p[k + 1] = 1.0 - (levels[k + 1] - w) / d
    return p


def membership_matrix(values: np.ndarray, levels_per_position: Sequence[np.ndarray]) -> np.ndarray:
    n_max = max(len(l) for l in levels_per_position)
    P = np.zeros((len(values), n_max), dtype=np.longdouble)
    for pos, (w, lv) in enumerate(zip(values, levels_per_position)):
        lv = np.asarray(lv)
        P[pos, : lv.size] = dense_membership(w, lv)
    return P


def _proxy_from_membership(P: np.ndarray, n: int) -> float:
    count = P.shape[0] // n
    if count == 0:
        raise ValueError("no complete tuples")
    blocks = P[: count * n].reshape(count, n, -1)
    letters = "abcdefgh"[:n]
    spec = ",".join(f"j{c}" for c in letters) + "->" + letters
    S = np.einsum(spec, *[blocks[:, m, :] for m in range(n)])
    W = np.longdouble(n * count)
    s = S[S > 0]
    return (n / W) * np.sum(s * (np.log2(W) - np.log2(np.longdouble(n)) - np.log2(s)))


def reference_proxy_entropy(values: np.ndarray, levels_per_position: Sequence[np.ndarray], n: int) -> float:
    return float(_proxy_from_membership(membership_matrix(values, levels_per_position), n))


def levels_per_position(store: ParamStore, codebooks: Sequence[Codebook]) -> list[np.ndarray]:
    out = []
    for layer, cb in zip(store.layers, codebooks):
        out.extend([cb.levels] * layer.size)
    return out


def finite_difference_gradient(
    store: ParamStore, codebooks: Sequence[Codebook], n: int, h: float = 1e-6, positions=None
) -> np.ndarray:
    """Central differences of the reference proxy at the given flat positions."""
    lv = levels_per_position(store, codebooks)
    x = store.flat
    base = membership_matrix(x, lv)
    positions = range(x.size) if positions is None else positions
    out = np.zeros(x.size)
    for i in positions:
        P = base.copy()
        xi = np.longdouble(x[i])
        P[i] = dense_membership(xi + h, lv[i])
        up = _proxy_from_membership(P, n)
        P[i] = dense_membership(xi - h, lv[i])
        out[i] = float((up - _proxy_from_membership(P, n)) / (2 * np.longdouble(h)))
    return out


def near_discontinuity(store: ParamStore, codebooks: Sequence[Codebook], rel: float = 1e-4) -> np.ndarray:
    """Mask of parameters within rel * (local interval width) of any level."""
    mask = np.zeros(store.total_count, dtype=bool)
    for layer, cb in zip(store.layers, codebooks):
        sl = store.layer_slice(layer.layer_id)
        w = layer.values[:, None]
        r = cb.levels[None, :]
        widths = np.diff(cb.levels)
        # width of the interval on either side of each level, use the smaller
        side = np.minimum(np.r_[widths[0], widths], np.r_[widths, widths[-1]])[None, :]
        mask[sl] = np.any(np.abs(w - r) <= rel * side, axis=1)
    return mask


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def random_codebook(rng: np.random.Generator, n_levels: int, layer_id: int = 0) -> Codebook:
    gaps = rng.uniform(0.2, 1.0, size=n_levels - 1)
    start = rng.uniform(-1.0, 0.0)
    return Codebook(layer_id, start + np.r_[0.0, np.cumsum(gaps)])


def random_config(rng: np.random.Generator, max_params: int = 128, levels=(2, 4, 8), orders=(1, 2, 3)):
    """Random multi-layer store with random codebooks; a few values fall outside the level range."""
    n_layers = int(rng.integers(1, 4))
    total = int(rng.integers(max(n_layers, 4), max_params + 1))
    cuts = np.sort(rng.choice(np.arange(1, total), size=n_layers - 1, replace=False)) if n_layers > 1 else []
    sizes = np.diff(np.r_[0, cuts, total]).astype(int)
    n_levels = int(rng.choice(levels))
    order = int(rng.choice(orders))
    layers, cbs = [], []
    for lid, size in enumerate(sizes):
        cb = random_codebook(rng, n_levels, lid)
        lo, hi = cb.levels[0], cb.levels[-1]
        pad = 0.05 * (hi - lo)
        layers.append((f"l{lid}", (int(size),), rng.uniform(lo - pad, hi + pad, size=int(size))))
        cbs.append(cb)
    return ParamStore(layers), cbs, order


@dataclass
class GradientCheck:
    order: int
    n_levels: int
    n_params: int
    checked: int
    max_rel_error: float


def gradient_check(store: ParamStore, codebooks: Sequence[Codebook], order: int, h: float = 1e-6) -> GradientCheck:
    view = group_tuples(store, order)
    _, grad = proxy_entropy_and_gradient(store, codebooks, view)
    keep = ~near_discontinuity(store, codebooks)
    positions = np.flatnonzero(keep)
    fd = finite_difference_gradient(store, codebooks, order, h=h, positions=positions)
    err = relative_error(grad[positions], fd[positions]) if positions.size else np.zeros(0)
    return GradientCheck(
        order, codebooks[0].level_count, store.total_count, int(positions.size),
        float(err.max()) if err.size else 0.0,
    )


@dataclass
class StationaryCheck:
    position: int
    stationary: float | None
    gradient_there: float | None


def stationary_check(store: ParamStore, codebooks: Sequence[Codebook], i: int) -> StationaryCheck:
    w = stationary_position(i, store, codebooks)
    if w is None:
        return StationaryCheck(i, None, None)
    probe = store.copy()
    probe.flat[i] = w
    _, g = proxy_entropy_and_gradient(probe, codebooks, group_tuples(probe, 1))
    return StationaryCheck(i, w, float(g[i]))


def bound_violations(
    store: ParamStore, codebooks: Sequence[Codebook], rtol: float = 1e-12, atol_bits: float = 1e-12
) -> tuple[int, float]:
    """(violations, max |grad|/bound) of the first-order gradient bound.

    The gradient and the bound sum the same bin masses in different orders,
    so near-balanced bins need an absolute slack on the log-ratio
    (``atol_bits``, scaled by 1/(delta |W|)) besides the relative one.
    """
    _, grad = proxy_entropy_and_gradient(store, codebooks, group_tuples(store, 1))
    nb = store_neighbors(store, codebooks)
    worst, bad = 0.0, 0
    for i in range(store.total_count):
        b = gradient_bound(i, store, codebooks)
        g = abs(grad[i])
        slack = atol_bits / (nb.delta[i] * store.total_count)
        if g > b * (1 + rtol) + slack:
            bad += 1
        if b > 0:
            worst = max(worst, g / b)
    return bad, worst


def entropy_by_order(store: ParamStore, codebooks: Sequence[Codebook], orders=(1, 2, 3)) -> list[tuple[int, float, float]]:
    """(n, proxy H_n, true H_n) in bits per tuple."""
    idx = quantize_store(store, codebooks)
    rows = []
    for n in orders:
        view = group_tuples(store, n)
        if view.num_tuples == 0:
            continue
        rows.append((n, proxy_entropy(store, codebooks, view), true_entropy(idx, view)))
    return rows
