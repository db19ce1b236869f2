"""Named random streams derived from one integer seed."""

import zlib

import numpy as np


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; same (seed, name) -> same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())]))
