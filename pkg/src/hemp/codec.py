"""Bit-exact ``.hemp`` container: per-layer codebooks plus index streams coded
with an adaptive, context-conditioned arithmetic (range) coder.

Layout (all integers little-endian)::

    "HEMP" | version u8 | order u8 | layer count u16
    per layer:
        name length u16 | name utf-8
        rank u8 | dims u32 * rank
        N u16 | levels f32 * N
        payload length u32 | payload
    crc32 u32 over every preceding byte

Symbols are coded with an order-(n-1) model: one adaptive frequency table per
context of the previous n-1 symbols of the same layer. Contexts restart at
every layer.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lloyd import Codebook, IndexMap

MAGIC = b"HEMP"
VERSION = 1

# arithmetic coder precision
_BITS = 32
_FULL = (1 << _BITS) - 1
_HALF = 1 << (_BITS - 1)
_QUARTER = 1 << (_BITS - 2)
_MAX_TOTAL = 1 << 16


class CodecError(Exception):
    pass


class BadMagicError(CodecError):
    pass


class ChecksumError(CodecError):
    pass


class TruncatedError(CodecError):
    pass


class _FrequencyModel:
    """Laplace-initialised symbol counts, halved once the total exceeds 2**16."""

    __slots__ = ("freq", "total")

    def __init__(self, n_symbols: int):
        self.freq = [1] * n_symbols
        self.total = n_symbols

    def interval(self, s: int) -> tuple[int, int]:
        low = sum(self.freq[:s])
        return low, low + self.freq[s]

    def find(self, target: int) -> tuple[int, int, int]:
        low = 0
        for s, f in enumerate(self.freq):
            if target < low + f:
                return s, low, low + f
            low += f
        raise CodecError("corrupt payload: cumulative frequency out of range")

    def update(self, s: int) -> None:
        self.freq[s] += 1
        self.total += 1
        if self.total > _MAX_TOTAL:
            self.freq = [(f + 1) // 2 for f in self.freq]
            self.total = sum(self.freq)


class _ContextModel:
    def __init__(self, n_symbols: int, context_order: int):
        self.n_symbols = n_symbols
        self.k = context_order
        self.tables: dict[tuple[int, ...], _FrequencyModel] = {}
        self.history: tuple[int, ...] = ()

    def current(self) -> _FrequencyModel:
        ctx = self.history
        table = self.tables.get(ctx)
        if table is None:
            table = self.tables[ctx] = _FrequencyModel(self.n_symbols)
        return table

    def push(self, s: int) -> None:
        if self.k:
            self.history = (self.history + (s,))[-self.k :]


def _encode_stream(symbols: Sequence[int], n_symbols: int, context_order: int) -> bytes:
    model = _ContextModel(n_symbols, context_order)
    low, high, pending = 0, _FULL, 0
    out = bytearray()
    acc, nbits = 0, 0

    def emit(bit: int) -> None:
        nonlocal acc, nbits
        acc = (acc << 1) | bit
        nbits += 1
        if nbits == 8:
            out.append(acc)
            acc, nbits = 0, 0

    for s in symbols:
        table = model.current()
        c_lo, c_hi = table.interval(s)
        span = high - low + 1
        high = low + span * c_hi // table.total - 1
        low = low + span * c_lo // table.total
        while True:
            if high < _HALF:
                emit(0)
                for _ in range(pending):
                    emit(1)
                pending = 0
            elif low >= _HALF:
                emit(1)
                for _ in range(pending):
                    emit(0)
                pending = 0
                low -= _HALF
                high -= _HALF
            elif low >= _QUARTER and high < _HALF + _QUARTER:
                pending += 1
                low -= _QUARTER
                high -= _QUARTER
            else:
                break
            low = low << 1
            high = (high << 1) | 1
        table.update(s)
        model.push(s)

    # flush: two more bits pin the final interval
    pending += 1
    bit = 0 if low < _QUARTER else 1
    emit(bit)
    for _ in range(pending):
        emit(1 - bit)
    if nbits:
        out.append(acc << (8 - nbits))
    return bytes(out)


def _decode_stream(payload: bytes, count: int, n_symbols: int, context_order: int) -> list[int]:
    model = _ContextModel(n_symbols, context_order)
    total_bits = len(payload) * 8
    pos = 0

    def read_bit() -> int:
        nonlocal pos
        # reading past the end yields zeros, matching the encoder's padding
        bit = (payload[pos >> 3] >> (7 - (pos & 7))) & 1 if pos < total_bits else 0
        pos += 1
        return bit

    value = 0
    for _ in range(_BITS):
        value = (value << 1) | read_bit()
    low, high = 0, _FULL
    out = []
    for _ in range(count):
        table = model.current()
        span = high - low + 1
        target = ((value - low + 1) * table.total - 1) // span
        s, c_lo, c_hi = table.find(target)
        high = low + span * c_hi // table.total - 1
        low = low + span * c_lo // table.total
        while True:
            if high < _HALF:
                pass
            elif low >= _HALF:
                value -= _HALF
                low -= _HALF
                high -= _HALF
            elif low >= _QUARTER and high < _HALF + _QUARTER:
                value -= _QUARTER
                low -= _QUARTER
                high -= _QUARTER
            else:
                break
            low = low << 1
            high = (high << 1) | 1
            value = (value << 1) | read_bit()
        out.append(s)
        table.update(s)
        model.push(s)
    return out


def encode_symbols(symbols, n_symbols: int, context_order: int = 0) -> bytes:
    """Entropy-code 0-based symbols with an adaptive order-``context_order`` model."""
    syms = [int(s) for s in np.asarray(symbols).reshape(-1)]
    if syms and (min(syms) < 0 or max(syms) >= n_symbols):
        raise ValueError(f"symbols must lie in [0, {n_symbols})")
    return _encode_stream(syms, n_symbols, context_order)


def decode_symbols(payload: bytes, count: int, n_symbols: int, context_order: int = 0) -> np.ndarray:
    return np.asarray(_decode_stream(payload, count, n_symbols, context_order), dtype=np.int64)


@dataclass
class LayerRecord:
    name: str
    shape: tuple[int, ...]
    levels: np.ndarray
    indices: np.ndarray  # 1-based


@dataclass
class DecodedModel:
    indices: IndexMap
    codebooks: list[Codebook]
    order: int
    names: list[str]
    shapes: list[tuple[int, ...]]


def encode(
    indices: IndexMap,
    codebooks: Sequence[Codebook],
    order: int,
    names: Sequence[str] | None = None,
    shapes: Sequence[Sequence[int]] | None = None,
) -> bytes:
    """Serialize a quantized model; the payload uses order-(order-1) contexts."""
    if not 1 <= order <= 255:
        raise ValueError("order must be in [1, 255]")
    if len(indices.layers) != len(codebooks):
        raise ValueError("one codebook per layer required")
    if len(indices.layers) > 0xFFFF:
        raise ValueError("too many layers")
    names = list(names) if names is not None else [f"layer{i}" for i in range(len(codebooks))]
    shapes = [tuple(s) for s in shapes] if shapes is not None else [(np.asarray(a).size,) for a in indices.layers]

    buf = bytearray(MAGIC)
    buf += struct.pack("<BBH", VERSION, order, len(codebooks))
    for name, shape, idx, cb in zip(names, shapes, indices.layers, codebooks):
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        if idx.size != int(np.prod(shape)):
            raise ValueError(f"layer {name!r}: {idx.size} indices for shape {shape}")
        n_levels = cb.level_count
        if idx.size and (idx.min() < 1 or idx.max() > n_levels):
            raise ValueError(f"layer {name!r}: indices outside [1, {n_levels}]")
        raw_name = name.encode("utf-8")
        buf += struct.pack("<H", len(raw_name)) + raw_name
        buf += struct.pack("<B", len(shape)) + struct.pack(f"<{len(shape)}I", *shape)
        buf += struct.pack("<H", n_levels) + cb.levels.astype("<f4").tobytes()
        payload = encode_symbols(idx - 1, n_levels, order - 1)
        buf += struct.pack("<I", len(payload)) + payload
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedError(f"container truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> DecodedModel:
    """Inverse of :func:`encode`; raises BadMagicError / ChecksumError / TruncatedError."""
    if len(data) < 4 or data[:4] != MAGIC:
        if len(data) < 4 and MAGIC.startswith(bytes(data)):
            raise TruncatedError("container shorter than its magic number")
        raise BadMagicError("not a HEMP container")
    if len(data) < 12:
        raise TruncatedError("container shorter than header + checksum")
    body, (stored,) = data[:-4], struct.unpack("<I", data[-4:])
    # Walk the structure first so a cut-off file reports truncation, not a bad checksum.
    layers = _parse_body(body)
    if zlib.crc32(body) != stored:
        raise ChecksumError("checksum mismatch")
    version, order, records = layers
    idx_layers, cbs, names, shapes = [], [], [], []
    for lid, (name, shape, levels, payload) in enumerate(records):
        count = int(np.prod(shape))
        symbols = decode_symbols(payload, count, levels.size, order - 1)
        idx_layers.append((symbols + 1).reshape(-1))
        cbs.append(Codebook(lid, levels))
        names.append(name)
        shapes.append(shape)
    return DecodedModel(IndexMap(idx_layers), cbs, order, names, shapes)


def _parse_body(body: bytes):
    r = _Reader(body)
    r.take(4)
    version, order, n_layers = r.unpack("<BBH")
    if version != VERSION:
        raise CodecError(f"unsupported container version {version}")
    records = []
    for _ in range(n_layers):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="replace")
        (rank,) = r.unpack("<B")
        shape = tuple(r.unpack(f"<{rank}I")) if rank else ()
        (n_levels,) = r.unpack("<H")
        levels = np.frombuffer(r.take(4 * n_levels), dtype="<f4").astype(np.float64)
        (plen,) = r.unpack("<I")
        payload = r.take(plen)
        records.append((name, shape, levels, payload))
    if r.pos != len(body):
        raise CodecError(f"{len(body) - r.pos} trailing bytes before checksum")
    return version, order, records


def payload_sizes(data: bytes) -> list[int]:
    """Byte length of each layer's coded payload."""
    _, _, records = _parse_body(data[:-4])
    return [len(rec[3]) for rec in records]


def export_raw_indices(indices: IndexMap, codebooks: Sequence[Codebook] | None = None) -> tuple[bytes, list[int]]:
    """One byte (index - 1) per symbol, layers concatenated.

    Returns the bytes and the starting offset of every layer.
    """
    offsets, parts, pos = [], [], 0
    for lid, idx in enumerate(indices.layers):
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        limit = codebooks[lid].level_count if codebooks is not None else 256
        if limit > 256 or (idx.size and idx.max() > 256):
            raise ValueError("raw export supports at most 256 levels")
        if idx.size and (idx.min() < 1 or idx.max() > limit):
            raise ValueError(f"layer {lid}: indices outside [1, {limit}]")
        offsets.append(pos)
        parts.append((idx - 1).astype(np.uint8).tobytes())
        pos += idx.size
    return b"".join(parts), offsets
