"""Deterministic stream derivation for seeded, splittable randomness.

All stochastic stages draw from counter-based Philox generators whose keys
are derived by hashing (global seed, purpose tag, indices).  Streams are
therefore independent of thread scheduling and identical across platforms
and worker counts.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.random import Generator, Philox


def derive_key(seed: int, *parts) -> np.ndarray:
    """Derive a 128-bit Philox key from a seed and a tuple of tag parts.

    Parts may be strings or integers; the encoding is unambiguous
    (length-prefixed), so ("a", 1) and ("a1",) never collide.
    """
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf-8")
        elif isinstance(part, (int, np.integer)):
            data = int(part).to_bytes(16, "little", signed=True)
        else:
            raise TypeError(f"key part must be str or int, got {type(part)!r}")
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    digest = h.digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


def stream(seed: int, *parts) -> Generator:
    """A fresh Generator on the Philox stream keyed by (seed, *parts)."""
    return Generator(Philox(key=derive_key(seed, *parts)))


def subsample_without_replacement(rng: Generator, pool: np.ndarray, k: int) -> np.ndarray:
    """Choose k distinct elements of `pool` via a Fisher-Yates prefix.

    Returns the chosen elements in selection order; `pool` is not modified.
    """
    pool = np.asarray(pool).copy()
    n = pool.size
    if not 0 <= k <= n:
        raise ValueError(f"cannot draw {k} from pool of {n}")
    for i in range(k):
        j = i + int(rng.integers(0, n - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]
