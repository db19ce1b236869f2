"""True n-th order entropy of quantization indices, its differentiable proxy,
the closed-form proxy gradient and the first-order analytic diagnostics.

Every tuple of n continuous parameters spreads unit mass over the n-tuples
of bin indices it can fall into; under the two-neighbour model that is at
most 2**n index tuples, whatever the number of levels. The joint mass of an
index tuple is the product of the per-coordinate neighbour probabilities.
Summing masses over all tuples gives the aggregate table ``S``, and the
proxy is the entropy of ``S / num_tuples`` in bits per tuple.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .binning import BinAssignment, NeighborArrays, store_neighbors
from .lloyd import Codebook, IndexMap
from .params import ParamStore, TupleView, group_tuples

EPS = 1e-12


@dataclass
class SupportCounter:
    """Instrumentation: how many index tuples were evaluated per parameter tuple."""

    tuples: int = 0
    evaluations: int = 0
    max_per_tuple: int = 0

    def record(self, per_tuple: np.ndarray | int) -> None:
        per_tuple = np.atleast_1d(np.asarray(per_tuple, dtype=np.int64))
        if per_tuple.size == 0:
            return
        self.tuples += int(per_tuple.size)
        self.evaluations += int(per_tuple.sum())
        self.max_per_tuple = max(self.max_per_tuple, int(per_tuple.max()))


@dataclass
class TupleHistogram:
    order: int
    counts: Counter
    total: int


@dataclass
class SoftTupleTable:
    """Aggregate soft mass per index tuple (0-based symbols, sparse)."""

    order: int
    entries: dict[tuple[int, ...], float]
    num_tuples: int
    support_per_tuple: int = field(init=False)

    def __post_init__(self):
        self.support_per_tuple = 2**self.order


@dataclass
class EntropyReport:
    order: int
    h_proxy: float
    h_true: float

    @property
    def per_symbol_proxy(self) -> float:
        return self.h_proxy / self.order

    @property
    def per_symbol_true(self) -> float:
        return self.h_true / self.order


def _entropy_bits(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log2(p)).sum()) if p.size else 0.0


def _as_codebooks(store: ParamStore, codebooks) -> list[Codebook]:
    if isinstance(codebooks, Codebook):
        return [codebooks] * len(store.layers)
    cbs = list(codebooks)
    if len(cbs) != len(store.layers):
        raise ValueError(f"{len(cbs)} codebooks for {len(store.layers)} layers")
    return cbs


# --------------------------------------------------------------------------
# quantized (true) entropy
# --------------------------------------------------------------------------


def tuple_histogram(indices, view: TupleView) -> TupleHistogram:
    flat = indices.flat() if isinstance(indices, IndexMap) else np.asarray(indices, dtype=np.int64)
    if view.num_tuples == 0:
        raise ValueError("no complete tuples to build a histogram from")
    blocks = flat[view.tuples]
    counts = Counter(map(tuple, blocks.tolist()))
    return TupleHistogram(view.order, counts, view.num_tuples)


def true_entropy(indices, view: TupleView) -> float:
    """Empirical entropy of the index n-tuples, bits per tuple."""
    flat = indices.flat() if isinstance(indices, IndexMap) else np.asarray(indices, dtype=np.int64)
    if view.num_tuples == 0:
        raise ValueError("no complete tuples to compute entropy over")
    blocks = flat[view.tuples]
    _, counts = np.unique(blocks, axis=0, return_counts=True)
    return _entropy_bits(counts / view.num_tuples)


# --------------------------------------------------------------------------
# soft joint probabilities
# --------------------------------------------------------------------------


def _coordinate_support(a: BinAssignment) -> list[tuple[int, float]]:
    if a.clamped:
        return [(a.q_minus, 1.0)]
    return [(q, p) for q, p in ((a.q_minus, a.p_minus), (a.q_plus, a.p_plus)) if p > 0]


def joint_soft_prob(
    assignments: Sequence[BinAssignment], counter: SupportCounter | None = None
) -> dict[tuple[int, ...], float]:
    """Product-form joint mass over the supported index tuples of one parameter tuple.

    Only coordinates with two live neighbours branch, so exactly
    2**(number of strictly interior coordinates) tuples are evaluated.
    """
    supports = [_coordinate_support(a) for a in assignments]
    out: dict[tuple[int, ...], float] = {}
    for combo in itertools.product(*supports):
        xi = tuple(q for q, _ in combo)
        out[xi] = out.get(xi, 0.0) + float(np.prod([p for _, p in combo]))
    if counter is not None:
        counter.record(len(out))
    return out


class _Corners:
    """All 2**n neighbour corners of every tuple, vectorised."""

    def __init__(self, nb: NeighborArrays, view: TupleView, base: int):
        n = view.order
        pos = view.tuples
        self.n = n
        self.T = view.num_tuples
        self.delta = nb.delta[pos]
        bits = (np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1  # (2^n, n)
        self.bits = bits
        qm = nb.q_minus[pos] - 1
        qp = nb.q_plus[pos] - 1
        # per coordinate probability for bit 0 (lower neighbour) / bit 1 (upper)
        self.coord_p = np.stack([nb.p_minus[pos], nb.p_plus[pos]], axis=-1)  # (T, n, 2)
        sym = np.where(bits[None, :, :] == 1, qp[:, None, :], qm[:, None, :])  # (T, 2^n, n)
        weights = base ** np.arange(n, dtype=np.int64)
        self.keys = (sym * weights).sum(axis=-1)  # (T, 2^n)
        self.mass = np.ones((self.T, 2**n))
        for m in range(n):
            self.mass *= self.coord_p[:, m, :][:, bits[:, m]]

    def aggregate(self):
        uniq, inv = np.unique(self.keys.reshape(-1), return_inverse=True)
        S = np.bincount(inv, weights=self.mass.reshape(-1), minlength=uniq.size)
        return uniq, inv.reshape(self.keys.shape), S

    def support_sizes(self) -> np.ndarray:
        return np.count_nonzero(self.mass > 0, axis=1)


def _base(codebooks: Sequence[Codebook]) -> int:
    return max(cb.level_count for cb in codebooks)


def soft_table(store: ParamStore, codebooks, view: TupleView) -> SoftTupleTable:
    cbs = _as_codebooks(store, codebooks)
    base = _base(cbs)
    corners = _Corners(store_neighbors(store, cbs), view, base)
    uniq, _, S = corners.aggregate()
    entries = {}
    for key, mass in zip(uniq.tolist(), S.tolist()):
        if mass > 0:
            xi = tuple((key // base**m) % base for m in range(view.order))
            entries[xi] = mass
    return SoftTupleTable(view.order, entries, view.num_tuples)


def proxy_entropy_and_gradient(
    store: ParamStore,
    codebooks,
    view: TupleView,
    with_gradient: bool = True,
    counter: SupportCounter | None = None,
) -> tuple[float, np.ndarray | None]:
    """Differentiable entropy proxy (bits per tuple) and its exact gradient.

    For coordinate m of tuple j with bracketing bins (q-, q+) and width D:

        dH/dw = 1/(T D) * sum_c  w(c) * log2( S(c, q-) / S(c, q+) )

    where c runs over the supported bins of the other n-1 coordinates,
    w(c) is their product probability and S the aggregate mass (floored at
    EPS). For n = 1 this is the familiar 1/(T D) log2(P(q-)/P(q+)).
    Remainder parameters and clamped coordinates get a zero gradient.
    """
    cbs = _as_codebooks(store, codebooks)
    T = view.num_tuples
    if T == 0:
        raise ValueError("no complete tuples for the entropy proxy")
    corners = _Corners(store_neighbors(store, cbs), view, _base(cbs))
    if counter is not None:
        counter.record(corners.support_sizes())
    _, inv, S = corners.aggregate()
    h = _entropy_bits(S / T)
    if not with_gradient:
        return h, None

    logS = np.log2(np.maximum(S, EPS))[inv]  # (T, 2^n)
    n = view.order
    bits = corners.bits
    grad_t = np.zeros((T, n))
    for m in range(n):
        low = np.flatnonzero(bits[:, m] == 0)
        high = low | (1 << m)
        weight = np.ones((T, low.size))
        for s in range(n):
            if s != m:
                weight *= corners.coord_p[:, s, :][:, bits[low, s]]
        grad_t[:, m] = (weight * (logS[:, low] - logS[:, high])).sum(axis=1)
    grad_t /= T * corners.delta

    grad = np.zeros(store.total_count)
    grad[view.tuples.reshape(-1)] = grad_t.reshape(-1)
    return h, grad


def proxy_entropy(store: ParamStore, codebooks, view: TupleView, counter: SupportCounter | None = None) -> float:
    return proxy_entropy_and_gradient(store, codebooks, view, with_gradient=False, counter=counter)[0]


def proxy_gradient(store: ParamStore, codebooks, view: TupleView) -> np.ndarray:
    return proxy_entropy_and_gradient(store, codebooks, view)[1]


def entropy_report(store: ParamStore, codebooks, indices, view: TupleView) -> EntropyReport:
    return EntropyReport(view.order, proxy_entropy(store, codebooks, view), true_entropy(indices, view))


# --------------------------------------------------------------------------
# first-order analysis
# --------------------------------------------------------------------------


def _bin_mass(nb: NeighborArrays, n_bins: int) -> np.ndarray:
    """Soft population of each (1-based) bin index summed over all parameters."""
    mass = np.bincount(nb.q_minus - 1, weights=nb.p_minus, minlength=n_bins)
    mass += np.bincount(nb.q_plus - 1, weights=nb.p_plus, minlength=n_bins)
    return mass


def stationary_position(i: int, store: ParamStore, codebooks) -> float | None:
    """Value of parameter ``i`` at which dH1/dw_i vanishes, or None.

    With K+/K- the soft populations of i's upper/lower bins contributed by
    all other parameters, the gradient vanishes when both bins hold equal
    mass, i.e. p(w_i -> q+) = (K- - K+ + 1) / 2, which is only reachable
    when |K- - K+| <= 1. Balanced neighbours give the interval midpoint.
    """
    cbs = _as_codebooks(store, codebooks)
    nb = store_neighbors(store, cbs)
    a = nb.item(i)
    if a.clamped:
        return None
    mass = _bin_mass(nb, _base(cbs))
    k_minus = mass[a.q_minus - 1] - a.p_minus
    k_plus = mass[a.q_plus - 1] - a.p_plus
    diff = k_minus - k_plus
    if abs(diff) > 1.0:
        return None
    p_plus = 0.5 * (diff + 1.0)
    levels = cbs[store.layer_of_position()[i]].levels
    lo = levels[a.q_minus - 1]
    return float(lo + p_plus * a.delta)


def gradient_bound(i: int, store: ParamStore, codebooks) -> float:
    """|1/(D_i |W|) log2(P(q-)/P(q+))| for the first-order proxy."""
    cbs = _as_codebooks(store, codebooks)
    nb = store_neighbors(store, cbs)
    a = nb.item(i)
    if a.clamped:
        return 0.0
    mass = _bin_mass(nb, _base(cbs))
    ratio = np.log2(max(mass[a.q_minus - 1], EPS)) - np.log2(max(mass[a.q_plus - 1], EPS))
    return float(abs(ratio / (a.delta * store.total_count)))


def first_order_view(store: ParamStore) -> TupleView:
    return group_tuples(store, 1)
