import numpy as np
import pytest

from modeq.streams import BLOCK_SIZE, block_ranges, block_rng, map_blocks, resolve_workers


def test_block_ranges_cover():
    r = block_ranges(2 * BLOCK_SIZE + 5)
    assert [b for b, _, _ in r] == [0, 1, 2]
    assert r[-1][2] - r[-1][1] == 5
    assert sum(stop - start for _, start, stop in r) == 2 * BLOCK_SIZE + 5


def test_streams_are_distinct_and_reproducible():
    a = block_rng(7, 0, 0).standard_normal(4)
    assert np.array_equal(a, block_rng(7, 0, 0).standard_normal(4))
    assert not np.array_equal(a, block_rng(7, 1, 0).standard_normal(4))
    assert not np.array_equal(a, block_rng(7, 0, 1).standard_normal(4))
    assert not np.array_equal(a, block_rng(8, 0, 0).standard_normal(4))


def test_map_blocks_order_independent_of_workers():
    fn = lambda b, s, e: block_rng(3, 0, b).standard_normal(e - s)
    M = 3 * BLOCK_SIZE + 17
    one = np.concatenate(map_blocks(fn, M, 1))
    many = np.concatenate(map_blocks(fn, M, 8))
    assert one.shape == (M,) and np.array_equal(one, many)


def test_worker_resolution(monkeypatch):
    monkeypatch.setenv("MODEQ_THREADS", "3")
    assert resolve_workers() == 3
    assert resolve_workers(5) == 5
    with pytest.raises(ValueError):
        resolve_workers(0)
    with pytest.raises(ValueError):
        block_ranges(0)
