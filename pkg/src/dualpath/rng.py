"""Counter-style seeding: every random stream is a pure function of a key.

Streams are keyed by ``(master_seed, *labels)`` through ``SeedSequence``
spawn keys, so results never depend on how work is scheduled.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _label(x) -> int:
    if isinstance(x, str):
        return zlib.crc32(x.encode())
    return int(x)


def stream(master_seed: int, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(_label(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def blocks(n: int, block_size: int) -> list[tuple[int, int]]:
    """Fixed partition of ``range(n)``; independent of thread count."""
    return [(s, min(s + block_size, n)) for s in range(0, n, block_size)]


def ordered_map(fn, items, threads: int = 1) -> list:
    """``map`` that preserves input order; parallel when ``threads > 1``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
