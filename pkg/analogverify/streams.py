"""Counter-based random streams keyed by explicit indices.

A stream is identified by a root seed, a purpose and a tuple of integer indices
(basis stream, run, segment, term, ...). The same key yields the same draws in
any process and in any order, so serial and parallel executions agree.
"""

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Purposes that separate the random streams of one experiment."""

    FAST_NOISE = 11
    SLOW_NOISE = 12
    MISCALIBRATION = 13
    IDLE_CROSSTALK = 14
    SEQUENCE = 21
    COMPILER = 22
    INITIAL_STATE = 23
    MEASUREMENT = 31


def stream_rng(seed: int, purpose: int, *indices: int) -> np.random.Generator:
    """Return a Philox generator for ``(seed, purpose, *indices)``.

    Args:
        seed: Non-negative root seed
        purpose: Stream purpose, usually a :class:`Stream` member
        *indices: Non-negative integer indices further partitioning the stream

    Returns:
        Independent numpy Generator

    Raises:
        ValueError: If the seed or any index is negative
    """
    keys = (int(purpose), *(int(i) for i in indices))
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError(f"Stream seed and indices must be non-negative, got {seed} {keys}")
    sequence = np.random.SeedSequence(int(seed), spawn_key=keys)
    return np.random.Generator(np.random.Philox(sequence))


def derive_seed(seed: int, purpose: int, *indices: int) -> int:
    """Derive a child integer seed from a stream key."""
    return int(stream_rng(seed, purpose, *indices).integers(0, 2**63 - 1))
