"""Ratio-controlled training-set assembly."""
import logging
import math
from enum import Enum

import numpy as np

from src.errors import InvalidArgumentError
from src.samples import Dataset, Label, Origin, concat

logger = logging.getLogger(__name__)


class Mode(Enum):
    """How synthetic positives enter the training set."""

    MIXED = "mixed"
    SYNTH_ONLY = "synth_only"


def parse_mode(mode: Mode | str) -> Mode:
    """Convert a mode name to Mode, raising InvalidArgumentError when unknown."""
    try:
        return Mode(mode)
    except ValueError:
        raise InvalidArgumentError(f"unknown mode {mode!r}; expected mixed or synth_only")


def synthetic_count(ratio: float, real_positives: int) -> int:
    """Number of synthetic positives for a ratio: floor(ratio * P)."""
    return math.floor(ratio * real_positives)


def pool_order(pool_size: int, seed: int) -> np.ndarray:
    """Seeded permutation of pool indices; every ratio takes a prefix of it."""
    return np.random.default_rng(seed).permutation(pool_size)


def assemble_training_set(
    real_train: Dataset,
    pool: Dataset,
    ratio: float,
    mode: Mode | str,
    seed: int,
) -> Dataset:
    """
    Build a training set with floor(ratio * P) synthetic positives.

    P counts real positives in real_train. The synthetic samples are the
    first floor(ratio * P) entries of one seeded shuffle of the pool, so the
    selection for a smaller ratio is a prefix of the one for a larger ratio.

    Args:
        real_train: Real training samples of both classes
        pool: Synthetic positives
        ratio: Synthetic-to-real ratio (>= 0)
        mode: ``mixed`` keeps real positives; ``synth_only`` drops them
        seed: Shuffle seed

    Returns:
        Assembled dataset (real_train itself for ratio 0 in mixed mode)

    Raises:
        InvalidArgumentError: If the ratio is negative or the pool is too small
    """
    mode = parse_mode(mode)
    if not (ratio >= 0 and math.isfinite(ratio)):
        raise InvalidArgumentError(f"ratio must be finite and >= 0, got {ratio}")
    if real_train.count(origin=Origin.SYNTHETIC) > 0:
        raise InvalidArgumentError("real_train must not contain synthetic samples")
    if any(s.origin is not Origin.SYNTHETIC for s in pool):
        raise InvalidArgumentError("pool must contain synthetic positives only")

    p_real = real_train.count(label=Label.POSITIVE)
    needed = synthetic_count(ratio, p_real)
    if needed > len(pool):
        raise InvalidArgumentError(
            f"synthetic pool too small: ratio {ratio:g} x {p_real} real positives "
            f"requires {needed}, available {len(pool)}"
        )
    if mode is Mode.MIXED and needed == 0:
        return real_train

    chosen = pool.subset(pool_order(len(pool), seed)[:needed].tolist())
    base = real_train if mode is Mode.MIXED else real_train.filter(label=Label.NEGATIVE)
    logger.debug(
        "assembled %s ratio %g: %d real + %d synthetic", mode.value, ratio, len(base), needed
    )
    return concat(
        [base, chosen],
        provenance=f"{mode.value} ratio={ratio:g} synthetic={needed} seed={seed}",
    )
