import numpy as np
import pytest
from hypothesis import given, strategies as st

from hemp.binning import assign_neighbors, neighbor_arrays, softmax_probs
from hemp.lloyd import Codebook

CB01 = Codebook(0, np.array([0.0, 1.0]))


@pytest.mark.parametrize("w,pm,pp", [(0.25, 0.75, 0.25), (0.0, 1.0, 0.0), (0.5, 0.5, 0.5)])
def test_linear_membership(w, pm, pp):
    a = assign_neighbors(w, CB01)
    assert (a.q_minus, a.q_plus) == (1, 2)
    assert a.p_minus == pytest.approx(pm, abs=1e-15)
    assert a.p_plus == pytest.approx(pp, abs=1e-15)
    assert a.delta == 1.0


def test_upper_level_and_clamping():
    top = assign_neighbors(1.0, CB01)
    assert top.p_plus == 1.0 and top.q_plus == 2
    for w, q in ((-3.0, 1), (3.0, 2)):
        a = assign_neighbors(w, CB01)
        assert a.clamped and a.q_minus == a.q_plus == q and a.p_minus == 1.0


levels_strategy = st.lists(st.floats(-5, 5), min_size=2, max_size=8, unique=True).map(sorted).filter(
    lambda l: np.min(np.diff(l)) > 1e-3
)


@given(levels_strategy, st.lists(st.floats(-6, 6), min_size=1, max_size=50))
def test_membership_invariants(levels, ws):
    nb = neighbor_arrays(np.array(ws), np.array(levels))
    np.testing.assert_allclose(nb.p_minus + nb.p_plus, 1.0, atol=1e-12)
    inner = ~nb.clamped
    np.testing.assert_array_equal(nb.q_plus[inner], nb.q_minus[inner] + 1)
    assert np.all(nb.p_minus[nb.clamped] == 1.0)
    assert np.all((nb.p_minus >= 0) & (nb.p_minus <= 1))


def test_softmax_examples():
    np.testing.assert_allclose(softmax_probs(0.5, CB01), [0.5, 0.5])
    e = np.exp(-1.0)
    np.testing.assert_allclose(softmax_probs(0.0, CB01), [1 / (1 + e), e / (1 + e)], rtol=1e-12)
    assert softmax_probs(0.0, CB01)[0] == pytest.approx(0.731, abs=1e-3)


def test_softmax_normalised():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        levels = np.sort(rng.uniform(-3, 3, int(rng.integers(2, 9))))
        if np.min(np.diff(levels)) <= 0:
            continue
        p = softmax_probs(rng.uniform(-4, 4), Codebook(0, levels))
        assert abs(p.sum() - 1.0) < 1e-12
