"""Equi-join hash table: 64-bit FNV-1a over the key bytes, chained on collision.

Chains are stored contiguously (entries stably sorted by hash), so a probe finds its
chain with a binary search and walks it in insertion order.  Candidates are then
checked for exact key equality, which discards hash collisions.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)


def _key_bytes(col: np.ndarray) -> np.ndarray:
    col = np.ascontiguousarray(col)
    if col.dtype.kind == "S":
        return col.view(np.uint8).reshape(len(col), col.dtype.itemsize)
    return col.astype("<i8").view(np.uint8).reshape(len(col), 8)


def fnv1a(keys: Sequence[np.ndarray]) -> np.ndarray:
    """FNV-1a 64 over the concatenated little-endian bytes of each key column."""
    n = len(keys[0]) if keys else 0
    h = np.full(n, FNV_OFFSET, dtype=np.uint64)
    for col in keys:
        mat = _key_bytes(col)
        for j in range(mat.shape[1]):
            h ^= mat[:, j].astype(np.uint64)
            h *= FNV_PRIME
    return h


def fnv1a_bytes(data: bytes) -> int:
    """Scalar reference version, used to cross-check the vectorized path."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class HashTable:
    def __init__(self, keys: Sequence[np.ndarray]):
        self.keys = [np.ascontiguousarray(k) for k in keys]
        self.n = len(self.keys[0]) if self.keys else 0
        hashes = fnv1a(self.keys)
        self._order = np.argsort(hashes, kind="stable")
        self._chain_hash = hashes[self._order]

    def __len__(self) -> int:
        return self.n

    @property
    def nbytes(self) -> int:
        return self._chain_hash.nbytes + self._order.nbytes + sum(k.nbytes for k in self.keys)

    def probe(self, keys: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(probe_idx, build_idx)`` of all matches.

        Pairs are ordered by probe row; for one probe row, build rows come in
        insertion order.
        """
        m = len(keys[0]) if keys else 0
        if m == 0 or self.n == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        h = fnv1a(keys)
        lo = np.searchsorted(self._chain_hash, h, side="left")
        hi = np.searchsorted(self._chain_hash, h, side="right")
        counts = hi - lo
        total = int(counts.sum())
        probe_idx = np.repeat(np.arange(m, dtype=np.int64), counts)
        run_start = np.repeat(lo - (np.cumsum(counts) - counts), counts)
        build_idx = self._order[run_start + np.arange(total, dtype=np.int64)]
        ok = np.ones(total, dtype=bool)
        for bk, pk in zip(self.keys, keys):
            ok &= bk[build_idx] == np.asarray(pk)[probe_idx]
        return probe_idx[ok], build_idx[ok]
