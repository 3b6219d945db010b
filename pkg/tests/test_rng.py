import numpy as np
import pytest

from rng import block_sizes, counter_rng, map_blocks


def test_same_stream_same_draws():
    a = counter_rng(7, 3, 1).random(16)
    b = counter_rng(7, 3, 1).random(16)
    assert np.array_equal(a, b)


def test_streams_differ():
    base = counter_rng(7, 0, 0).random(8)
    assert not np.array_equal(base, counter_rng(7, 1, 0).random(8))
    assert not np.array_equal(base, counter_rng(7, 0, 1).random(8))
    assert not np.array_equal(base, counter_rng(8, 0, 0).random(8))


def test_seed_and_stream_validation():
    with pytest.raises(ValueError):
        counter_rng(-1)
    with pytest.raises(ValueError):
        counter_rng(2 ** 64)
    with pytest.raises(ValueError):
        counter_rng(0, 1, 2, 3, 4)
    counter_rng(2 ** 64 - 1, 1, 2, 3)


def test_block_sizes():
    assert block_sizes(10, 4) == [4, 4, 2]
    assert block_sizes(8, 4) == [4, 4]
    assert sum(block_sizes(100001)) == 100001
    with pytest.raises(ValueError):
        block_sizes(0)


def test_map_blocks_is_independent_of_threads():
    def draw(block, size):
        return counter_rng(11, block).random(size).sum()

    single = map_blocks(draw, 1000, threads=1, block_size=64)
    pooled = map_blocks(draw, 1000, threads=4, block_size=64)
    assert single == pooled
    assert len(single) == 16
