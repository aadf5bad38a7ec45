"""Imbalanced-classification metrics and stratified fold planning."""
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion matrix at one threshold."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        """Validate counts."""
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise InvalidArgumentError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        """Number of evaluated samples."""
        return self.tp + self.fp + self.fn + self.tn


def _as_arrays(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise InvalidArgumentError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise InvalidArgumentError("labels must be 0 or 1")
    return s, y.astype(bool)


def confusion_at_threshold(
    scores: Sequence[float],
    labels: Sequence[int],
    threshold: float = 0.5,
) -> ConfusionCounts:
    """
    Count outcomes when predicting positive iff score >= threshold.

    Args:
        scores: Positive-class scores
        labels: Binary labels
        threshold: Decision threshold in [0, 1]

    Returns:
        ConfusionCounts

    Raises:
        InvalidArgumentError: On length mismatch or a threshold outside [0, 1]
    """
    if not 0.0 <= threshold <= 1.0:
        raise InvalidArgumentError(f"threshold must lie in [0, 1], got {threshold}")
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    return ConfusionCounts(
        tp=int(np.sum(pred & y)),
        fp=int(np.sum(pred & ~y)),
        fn=int(np.sum(~pred & y)),
        tn=int(np.sum(~pred & ~y)),
    )


def f1_precision_recall(c: ConfusionCounts) -> tuple[float, float, float]:
    """
    F1, precision and recall of the positive class.

    A zero denominator yields 0 for the affected quantity.

    Returns:
        Tuple of (f1, precision, recall)
    """
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1, precision, recall


def pr_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Average precision: sum over distinct thresholds of (R_k - R_{k-1}) * P_k.

    Samples are ranked by descending score with a stable sort; tied scores
    form one group, and precision and recall are taken after the whole
    group, so the result does not depend on the order of tied samples.

    Args:
        scores: Positive-class scores
        labels: Binary labels

    Returns:
        Average precision in [0, 1]

    Raises:
        InvalidArgumentError: If there is no positive sample
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise InvalidArgumentError("pr_auc needs at least one positive sample")

    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each tie group
    ends = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps

    terms = []
    prev_tp = 0
    for tp, fp in zip(tps.tolist(), fps.tolist()):
        if tp > prev_tp:
            terms.append((tp - prev_tp) / n_pos * (tp / (tp + fp)))
        prev_tp = tp
    return math.fsum(terms)


@dataclass(frozen=True)
class FoldPlan:
    """Per-fold test index sets of a stratified k-fold split."""

    k: int
    seed: int
    test_indices: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        """Number of indexed samples."""
        return sum(len(f) for f in self.test_indices)

    def train_indices(self, fold: int) -> tuple[int, ...]:
        """Indices not in the given fold's test set, ascending."""
        held = set(self.test_indices[fold])
        return tuple(i for i in range(self.n) if i not in held)


def stratified_kfold(labels: Sequence[int], k: int, seed: int) -> FoldPlan:
    """
    Stratified k-fold plan.

    Indices of each class are shuffled with a seeded generator and dealt
    round-robin to folds; the dealing position carries over from one class
    to the next so fold sizes also differ by at most one.

    Args:
        labels: Binary labels
        k: Number of folds (>= 2)
        seed: Shuffle seed

    Returns:
        FoldPlan with ascending index tuples per fold

    Raises:
        InvalidArgumentError: If k < 2 or k exceeds the sample count
    """
    y = np.asarray(labels).ravel()
    if k < 2:
        raise InvalidArgumentError(f"k must be >= 2, got {k}")
    if k > y.size:
        raise InvalidArgumentError(f"k={k} exceeds the number of samples ({y.size})")

    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    position = 0
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        if members.size < k:
            logger.warning("class %s has %d samples, fewer than k=%d folds", cls, members.size, k)
        for idx in rng.permutation(members).tolist():
            folds[position % k].append(idx)
            position += 1

    return FoldPlan(k=k, seed=seed, test_indices=tuple(tuple(sorted(f)) for f in folds))
