"""Named random streams derived from one root seed."""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "projections", "trees", "evaluation", "subsample")


def stream_seed(root: int, name: str, *extra: int) -> int:
    """Stable 63-bit seed for the stream ``name`` (optionally indexed by ``extra``)."""
    ss = np.random.SeedSequence([int(root) & (2**64 - 1), zlib.crc32(name.encode()), *extra])
    return int(ss.generate_state(1, dtype=np.uint64)[0]) >> 1


def stream_rng(root: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root, name, *extra))
