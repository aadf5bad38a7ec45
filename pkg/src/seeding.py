"""Seed splitting shared by every stage."""
import numpy as np


def derive_seed(*parts: int) -> int:
    """
    Derive an independent 32-bit seed from a tuple of integers.

    Uses numpy's SeedSequence hashing, so (a, b) and (b, a) give unrelated
    streams and the mapping is stable across platforms and processes.

    Args:
        parts: Non-negative integers identifying the stream

    Returns:
        Seed in [0, 2**32)
    """
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])
