import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hemp.codec import (
    BadMagicError,
    ChecksumError,
    TruncatedError,
    decode,
    decode_symbols,
    encode,
    encode_symbols,
    export_raw_indices,
    payload_sizes,
)
from hemp.lloyd import Codebook, IndexMap


def random_model(rng):
    layers, cbs, shapes = [], [], []
    for lid in range(int(rng.integers(1, 4))):
        n_levels = int(rng.integers(2, 17))
        shape = tuple(int(d) for d in rng.integers(1, 12, size=int(rng.integers(1, 3))))
        layers.append(rng.integers(1, n_levels + 1, size=int(np.prod(shape))))
        cbs.append(Codebook(lid, np.sort(rng.choice(np.linspace(-2, 2, 64), n_levels, replace=False)).astype(np.float32)))
        shapes.append(shape)
    return IndexMap(layers), cbs, int(rng.integers(1, 4)), shapes


def test_constant_stream_tiny():
    assert len(encode_symbols(np.zeros(10_000, dtype=int), 4)) < 200


def test_uniform_stream_near_two_bits():
    s = np.random.default_rng(0).integers(0, 4, 10_000)
    assert abs(len(encode_symbols(s, 4)) - 2500) <= 0.05 * 2500


def test_context_helps_alternating_stream():
    s = np.tile([0, 1], 5000)
    ctx = len(encode_symbols(s, 4, context_order=1))
    flat = len(encode_symbols(s, 4, context_order=0))
    assert ctx * 10 < flat


@pytest.mark.parametrize("order", [0, 1, 2])
def test_symbol_roundtrip(order):
    rng = np.random.default_rng(order)
    s = rng.integers(0, 5, 3000)
    np.testing.assert_array_equal(decode_symbols(encode_symbols(s, 5, order), s.size, 5, order), s)


def test_container_roundtrip_fuzz():
    rng = np.random.default_rng(7)
    for _ in range(100):
        ind, cbs, order, shapes = random_model(rng)
        blob = encode(ind, cbs, order, shapes=shapes)
        back = decode(blob)
        assert back.indices == ind
        assert back.order == order and back.shapes == shapes
        for a, b in zip(back.codebooks, cbs):
            np.testing.assert_array_equal(a.levels, b.levels)
        assert encode(back.indices, back.codebooks, back.order, back.names, back.shapes) == blob


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=0, max_size=300), st.integers(1, 3))
def test_single_layer_roundtrip_property(symbols, order):
    ind = IndexMap([np.array(symbols, dtype=np.int64)])
    blob = encode(ind, [Codebook(0, np.array([-1.0, 0.0, 1.0]))], order)
    assert decode(blob).indices == ind


def test_corruption_detected():
    ind, cbs, order, shapes = random_model(np.random.default_rng(1))
    blob = bytearray(encode(ind, cbs, order, shapes=shapes))
    blob[-6] ^= 0x40
    with pytest.raises(ChecksumError):
        decode(bytes(blob))


def test_truncation_detected():
    ind, cbs, order, shapes = random_model(np.random.default_rng(2))
    blob = encode(ind, cbs, order, shapes=shapes)
    for cut in (3, 10, len(blob) // 2, len(blob) - 5):
        with pytest.raises(TruncatedError):
            decode(blob[:cut])


def test_bad_magic():
    with pytest.raises(BadMagicError):
        decode(b"NOPE" + bytes(20))


def test_payload_sizes_sum():
    ind, cbs, order, shapes = random_model(np.random.default_rng(3))
    blob = encode(ind, cbs, order, shapes=shapes)
    assert len(payload_sizes(blob)) == len(cbs)
    assert sum(payload_sizes(blob)) < len(blob)


def test_raw_export():
    raw, offsets = export_raw_indices(IndexMap([np.array([1, 2]), np.array([3, 1])]))
    assert raw == bytes([0, 1, 2, 0])
    assert offsets == [0, 2]
    with pytest.raises(ValueError):
        export_raw_indices(IndexMap([np.array([1])]), [Codebook(0, np.arange(300.0))])


def test_encode_validates_indices():
    with pytest.raises(ValueError):
        encode(IndexMap([np.array([0, 1])]), [Codebook(0, np.array([0.0, 1.0]))], 1)
    with pytest.raises(ValueError):
        encode(IndexMap([np.array([1])]), [Codebook(0, np.array([0.0, 1.0]))], 0)
