"""Counter-based random streams for reproducible Monte Carlo.

Every stream is a Philox generator keyed by the run seed. The stream ids go into the
upper counter words; the lowest word is left for the draws themselves. Trials run in
fixed-size blocks with one stream per block, so results do not depend on the worker count.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

import numpy as np

from config import Config

logger = logging.getLogger(__name__)

T = TypeVar('T')

_MAX_STREAM_WORDS = 3
_U64 = 2 ** 64


def counter_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for stream (seed, *stream); identical ids give identical draws."""
    if not 0 <= int(seed) < _U64:
        raise ValueError(f"Seed must be an unsigned 64-bit integer, got {seed}")
    if len(stream) > _MAX_STREAM_WORDS:
        raise ValueError(f"At most {_MAX_STREAM_WORDS} stream ids are supported, got {len(stream)}")
    words = [0] + [int(s) % _U64 for s in stream] + [0] * (_MAX_STREAM_WORDS - len(stream))
    return np.random.Generator(np.random.Philox(key=int(seed), counter=words))


def block_sizes(trials: int, block_size: int = None) -> List[int]:
    """Split trials into fixed-size blocks; the last block may be short."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    block_size = block_size or Config.MC_BLOCK_SIZE
    full, rest = divmod(trials, block_size)
    return [block_size] * full + ([rest] if rest else [])


def map_blocks(func: Callable[[int, int], T], trials: int, threads: int = 1,
               block_size: int = None) -> List[T]:
    """Run func(block_index, block_trials) for every block; results come back in block order."""
    sizes = block_sizes(trials, block_size)
    logger.debug("running %d trials in %d blocks on %d thread(s)", trials, len(sizes), threads)
    if threads <= 1 or len(sizes) == 1:
        return [func(i, size) for i, size in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(func, range(len(sizes)), sizes))
