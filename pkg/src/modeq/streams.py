"""Counter-based random streams and the block-parallel map used by all ensembles.

Paths are grouped into fixed-size blocks. Block ``b`` of stream ``s`` under
master seed ``seed`` draws from a Philox generator keyed by ``(seed, s, b)``,
and within a block the draws are consumed step by step (then substep by
substep). Results therefore depend only on ``(seed, stream, M)`` and never on
how many workers process the blocks or in which order.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BLOCK_SIZE = 8192
THREADS_ENV = "MODEQ_THREADS"

# Reserved stream tags (user streams are small nonnegative integers).
BRIDGE_TAG = 1 << 30
INDEPENDENT_TAG = 1 << 29


def block_rng(seed: int, stream: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.Philox(ss))


def keyed_rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def block_ranges(M: int, block_size: int = BLOCK_SIZE):
    """(block index, start, stop) for M paths."""
    if M < 1:
        raise ValueError("ensemble size must be >= 1")
    return [(b, s, min(s + block_size, M)) for b, s in enumerate(range(0, M, block_size))]


def resolve_workers(workers=None) -> int:
    if workers is None:
        env = os.environ.get(THREADS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    workers = int(workers)
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    return workers


def map_blocks(fn, M: int, workers=None, block_size: int = BLOCK_SIZE):
    """Apply ``fn(block, start, stop)`` to every block; results in block order."""
    ranges = block_ranges(M, block_size)
    n = min(resolve_workers(workers), len(ranges))
    if n == 1:
        return [fn(*r) for r in ranges]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))
