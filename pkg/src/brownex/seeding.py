"""
Deterministic random streams.

Every random draw in brownex comes from a numpy Generator whose seed is derived
from (master seed, key). Keys are hashed with blake2b rather than hash(), which
is salted per process, so sub-seeds are identical across runs, processes and
worker counts.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from typing import Hashable

import numpy as np

_MASK64 = (1 << 64) - 1


def key_digest(*key: Hashable) -> int:
    """Stable 64-bit digest of a key tuple."""
    text = "\x1f".join(repr(k) for k in key)
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def derive_seed(seed: int, *key: Hashable) -> int:
    """
    Summary:
        Derives a 64-bit sub-seed from a master seed and a key.

    Args:
        seed: The master seed.
        *key: Any hashable parts identifying the sub-stream (cell key, scenario index...).

    Returns:
        A non-negative integer below 2**64.
    """
    seq = np.random.SeedSequence([int(seed) & _MASK64, key_digest(*key)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *key: Hashable) -> np.random.Generator:
    """A PCG64 generator for (seed, key); with no key, plain default_rng(seed)."""
    if not key:
        return np.random.default_rng(int(seed))
    return np.random.default_rng(derive_seed(seed, *key))


def scenario_normals(
    seed: int,
    n_rows: int,
    n_cols: int,
    stream: str,
    workers: int = 1,
) -> np.ndarray:
    """
    Summary:
        Builds an (n_rows, n_cols) matrix of standard normals where row j comes
        from its own generator seeded by (seed, stream, j).

    Args:
        seed: The master seed.
        n_rows: Number of scenarios.
        n_cols: Draws per scenario.
        stream: Stream label; different labels give independent matrices.
        workers: Threads used to fill rows. The result does not depend on it.

    Returns:
        The matrix of draws.
    """
    out = np.empty((n_rows, n_cols), dtype=float)
    if n_rows == 0 or n_cols == 0:
        return out

    def _fill(rows: range) -> None:
        for j in rows:
            out[j] = make_rng(seed, stream, j).standard_normal(n_cols)

    workers = max(1, int(workers))
    if workers == 1:
        _fill(range(n_rows))
        return out

    chunk = -(-n_rows // workers)
    chunks = [range(lo, min(lo + chunk, n_rows)) for lo in range(0, n_rows, chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(_fill, chunks))
    return out
