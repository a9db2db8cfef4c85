"""Lazily materialised Johnson-Lindenstrauss projections over tests and histories.

A key (test or history) is a tuple of ``(action, observation)`` pairs. Each
key is mapped to a column of a random projection matrix that is never held
in memory as a whole: the column is regenerated on demand from a stable hash
of ``(seed, key)``, so the same key always yields the same column.

Entries are produced by a counter-based generator (splitmix64), which lets a
single column and a batch of columns share one code path and be bit-identical.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

FAMILIES = ("spherical", "rademacher", "hashed")
DEFAULT_CACHE_CAPACITY = 2**20

Key = tuple  # tuple[tuple[int, int], ...]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_NEG53 = 1.0 / (1 << 53)


@dataclass(frozen=True)
class ProjectionSpec:
    """Recipe for one projection map.

    ``unique_start`` selects the history convention: when true the null
    history is mapped to ``(1, 0, ..., 0)`` and every other history to
    ``(0, phi(h))``; when false a constant leading 1 is prepended to every
    history column (the "dummy column" variant for systems without a fixed
    start state). It only affects :func:`phi_history_column`.
    """

    family: str
    dim: int
    seed: int
    unique_start: bool = True
    signed: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown projection family {self.family!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "dim": self.dim,
            "seed": self.seed,
            "unique_start": self.unique_start,
            "signed": self.signed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionSpec":
        return cls(d["family"], int(d["dim"]), int(d["seed"]),
                   bool(d.get("unique_start", True)), bool(d.get("signed", False)))


_MASK = (1 << 64) - 1
_G = 0x9E3779B97F4A7C15
_K1 = 0xBF58476D1CE4E5B9
_K2 = 0x94D049BB133111EB


def _splitmix(x: int) -> int:
    x = (x + _G) & _MASK
    x = ((x ^ (x >> 30)) * _K1) & _MASK
    x = ((x ^ (x >> 27)) * _K2) & _MASK
    return x ^ (x >> 31)


EMPTY_KEY_HASH = _splitmix(0x5EED_C0DE_0000_0001)


def extend_hash(h: int, action: int, obs: int) -> int:
    """Hash of ``key + ((action, obs),)`` given the hash ``h`` of ``key``.

    Each pair is mixed in as one 64-bit unit, so ``(1, 12)`` and ``(11, 2)``
    cannot be confused, and the number of mixing rounds encodes the length.
    """
    if not (0 <= action < 2**32 and 0 <= obs < 2**32):
        raise ValueError("action/observation ids must fit in 32 bits")
    return _splitmix(h ^ ((action << 32) | obs))


def key_hash(key) -> int:
    """Seed-independent 64-bit hash of a test or history key."""
    h = EMPTY_KEY_HASH
    for a, o in key:
        h = extend_hash(h, int(a), int(o))
    return h


def spec_salt(spec: "ProjectionSpec") -> int:
    return _splitmix(_splitmix(spec.seed) ^ 0xC0FFEE)


def _mix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _uniform(hashes: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniforms in (0, 1], shape ``(len(counters), len(hashes))``."""
    with np.errstate(over="ignore"):
        x = hashes[None, :] ^ (counters[:, None] * _GOLDEN)
    bits = _mix(_mix(x)) >> np.uint64(11)
    return (bits.astype(np.float64) + 1.0) * _TWO_NEG53


def columns_from_hashes(spec: ProjectionSpec, hashes: np.ndarray) -> np.ndarray:
    """Projection columns for keys given by :func:`key_hash`, shape ``(dim, n)``."""
    with np.errstate(over="ignore"):
        hashes = _mix(np.asarray(hashes, dtype=np.uint64) ^ np.uint64(spec_salt(spec)))
    d, n = spec.dim, hashes.shape[0]
    if spec.family == "spherical":
        rows = np.arange(d, dtype=np.uint64)
        u1 = _uniform(hashes, 2 * rows)
        u2 = _uniform(hashes, 2 * rows + np.uint64(1))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2) / np.sqrt(d)
    if spec.family == "rademacher":
        bits = _mix(hashes[None, :] ^ (np.arange(d, dtype=np.uint64)[:, None] * _M1))
        sign = (bits & np.uint64(1)).astype(np.float64) * 2.0 - 1.0
        return sign / np.sqrt(d)
    # hashed: a single 1 per column at a hash-selected row
    r = _mix(hashes ^ _M2)
    pos = (r % np.uint64(d)).astype(np.intp)
    out = np.zeros((d, n))
    val = np.ones(n)
    if spec.signed:
        val = ((_mix(r) & np.uint64(1)).astype(np.float64) * 2.0 - 1.0)
    out[pos, np.arange(n)] = val
    return out


def phi_column(spec: ProjectionSpec, key) -> np.ndarray:
    """Column of the projection matrix for one test or history key."""
    h = np.array([key_hash(key)], dtype=np.uint64)
    return columns_from_hashes(spec, h)[:, 0]


def phi_history_column(spec: ProjectionSpec, key) -> np.ndarray:
    """Augmented history column of length ``dim + 1``."""
    out = np.zeros(spec.dim + 1)
    out[0] = 1.0 if (len(key) == 0 or not spec.unique_start) else 0.0
    if len(key) or not spec.unique_start:
        out[1:] = phi_column(spec, key)
    return out


class LRUCache:
    """Bounded least-recently-used map from ``(spec, key hash)`` to columns.

    ``materializations`` counts columns generated because of a miss. The cache
    is safe to share across threads; results never depend on its contents.
    """

    def __init__(self, capacity: int = DEFAULT_CACHE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.materializations = 0

    def __len__(self):
        return len(self._data)

    def __contains__(self, item):
        return item in self._data

    def keys(self):
        return list(self._data.keys())

    def get(self, item):
        with self._lock:
            val = self._data.get(item)
            if val is not None:
                self._data.move_to_end(item)
                self.hits += 1
            return val

    def put(self, item, value):
        with self._lock:
            self._data[item] = value
            self._data.move_to_end(item)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)


def cached_phi(cache: LRUCache, spec: ProjectionSpec, key) -> np.ndarray:
    """:func:`phi_column` through an LRU cache."""
    return columns(spec, [key_hash(key)], cache)[:, 0]


def columns(spec: ProjectionSpec, hashes: Sequence[int],
            cache: LRUCache | None = None) -> np.ndarray:
    """Stack columns for many key hashes, generating cache misses in one batch."""
    n = len(hashes)
    if cache is None:
        return columns_from_hashes(spec, np.fromiter(hashes, np.uint64, n))
    out = np.empty((spec.dim, n))
    missing = []
    for j, h in enumerate(hashes):
        col = cache.get((spec, h))
        if col is None:
            missing.append(j)
        else:
            out[:, j] = col
    if missing:
        block = columns_from_hashes(
            spec, np.fromiter((hashes[j] for j in missing), np.uint64, len(missing)))
        out[:, missing] = block
        cache.materializations += len(missing)
        for i, j in enumerate(missing):
            col = block[:, i].copy()
            col.flags.writeable = False
            cache.put((spec, hashes[j]), col)
    return out


def history_columns(spec: ProjectionSpec, hashes: Sequence[int],
                    cache: LRUCache | None = None) -> np.ndarray:
    """Augmented ``(dim + 1, n)`` history columns for many key hashes."""
    base = columns(spec, hashes, cache)
    aug = np.zeros((spec.dim + 1, len(hashes)))
    if spec.unique_start:
        null = np.fromiter((h == EMPTY_KEY_HASH for h in hashes), bool, len(hashes))
        aug[0, null] = 1.0
        aug[1:, ~null] = base[:, ~null]
    else:
        aug[0] = 1.0
        aug[1:] = base
    return aug


def phi_matrix(spec: ProjectionSpec, keys: Iterable, cache: LRUCache | None = None,
               history: bool = False) -> np.ndarray:
    """Columns for explicit keys; ``history=True`` gives augmented history columns."""
    hashes = [key_hash(k) for k in keys]
    if history:
        return history_columns(spec, hashes, cache)
    return columns(spec, hashes, cache)


def pack_pairs(actions: np.ndarray, observations: np.ndarray) -> np.ndarray:
    """Pairs packed into the 64-bit units consumed by :func:`extend_hashes`."""
    a = np.asarray(actions, dtype=np.uint64)
    o = np.asarray(observations, dtype=np.uint64)
    return (a << np.uint64(32)) | o


def extend_hashes(h: np.ndarray, packed: np.ndarray) -> np.ndarray:
    """Vectorised :func:`extend_hash`; ``packed`` comes from :func:`pack_pairs`."""
    return _mix(np.asarray(h, dtype=np.uint64) ^ packed)
