"""Pairwise diversity of real vs synthetic rare-class images.

Two pair metrics are compared: PSNR (pixel level) and a perceptual
distance, 1 - cosine similarity of a trained classifier's penultimate
embeddings. The perceptual distance is a surrogate for learned
perceptual metrics and is labelled as such in every report.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import ks_2samp

from src.classifier import ClassifierModel, embed_images
from src.errors import InvalidArgumentError
from src.samples import Dataset

logger = logging.getLogger(__name__)

INF_DB = 100.0
PERCEPTUAL_LABEL = "perceptual-distance (surrogate)"


@dataclass(frozen=True)
class DiversityConfig:
    """Pair budget, histogram bins and verdict thresholds."""

    max_pairs: int = 2000
    bins: int = 20
    psnr_tolerance_db: float = 3.0
    collapse_std_ratio: float = 0.25

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        if self.max_pairs < 1:
            raise InvalidArgumentError("max_pairs must be >= 1")
        if self.bins < 1:
            raise InvalidArgumentError("bins must be >= 1")
        if self.psnr_tolerance_db < 0:
            raise InvalidArgumentError("psnr_tolerance_db must be non-negative")
        if not 0 < self.collapse_std_ratio <= 1:
            raise InvalidArgumentError("collapse_std_ratio must lie in (0, 1]")


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """
    Peak signal-to-noise ratio with MAX = 1: 10 log10(1 / MSE).

    Identical images give the INF_DB sentinel (100 dB), which also caps
    the result.

    Raises:
        InvalidArgumentError: On shape mismatch
    """
    if a.shape != b.shape:
        raise InvalidArgumentError(f"psnr shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(torch.mean((a.double() - b.double()) ** 2))
    if mse == 0.0:
        return INF_DB
    return min(INF_DB, 10.0 * math.log10(1.0 / mse))


def embedding_distance(u: torch.Tensor, v: torch.Tensor) -> float:
    """1 - cosine similarity of two embeddings, clamped to [0, 2]; 0 for equal vectors."""
    if torch.equal(u, v):
        return 0.0
    cos = torch.dot(F.normalize(u.double(), dim=0), F.normalize(v.double(), dim=0))
    return float(torch.clamp(1.0 - cos, 0.0, 2.0))


def perceptual_distance(model: ClassifierModel, a: torch.Tensor, b: torch.Tensor) -> float:
    """
    Perceptual distance between two (1, H, W) images.

    Raises:
        UntrainedModelError: If the classifier is not trained
    """
    emb = embed_images(model, torch.stack([a, b]))
    return embedding_distance(emb[0], emb[1])


def sample_pairs(n: int, max_pairs: int, seed: int) -> list[tuple[int, int]]:
    """
    Distinct unordered pairs (i < j) of n items.

    All C(n, 2) pairs in lexicographic order when they fit the budget;
    otherwise max_pairs pair ranks drawn without replacement and returned
    in ascending rank order.

    Raises:
        InvalidArgumentError: If n < 2 or max_pairs < 1
    """
    if n < 2:
        raise InvalidArgumentError(f"pairwise statistics need at least 2 images, got {n}")
    if max_pairs < 1:
        raise InvalidArgumentError("max_pairs must be >= 1")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        ranks = np.arange(total)
    else:
        ranks = np.sort(np.random.default_rng(seed).choice(total, size=max_pairs, replace=False))
    # rank of the first pair whose smaller index is i
    first = np.arange(n - 1)
    starts = first * (2 * n - first - 1) // 2
    i = np.searchsorted(starts, ranks, side="right") - 1
    j = i + 1 + (ranks - starts[i])
    return list(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True)
class Distribution:
    """Empirical pairwise-metric sample with summary statistics.

    ``std`` is the population standard deviation of ``values``.
    """

    values: tuple[float, ...]
    pairs: tuple[tuple[int, int], ...]
    count: int
    mean: float
    std: float
    min: float
    max: float
    quartiles: tuple[float, float, float]
    bin_edges: tuple[float, ...]
    bin_counts: tuple[int, ...]

    @classmethod
    def from_values(
        cls,
        values: Sequence[float],
        pairs: Sequence[tuple[int, int]] = (),
        bins: int = 20,
    ) -> "Distribution":
        """Summarize values; the histogram spans their range."""
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise InvalidArgumentError("a distribution needs at least one value")
        counts, edges = np.histogram(arr, bins=bins)
        q1, q2, q3 = np.percentile(arr, [25, 50, 75])
        return cls(
            values=tuple(arr.tolist()),
            pairs=tuple((int(i), int(j)) for i, j in pairs),
            count=int(arr.size),
            mean=float(arr.mean()),
            std=float(arr.std()),
            min=float(arr.min()),
            max=float(arr.max()),
            quartiles=(float(q1), float(q2), float(q3)),
            bin_edges=tuple(edges.tolist()),
            bin_counts=tuple(int(c) for c in counts),
        )

    def summary(self) -> dict:
        """Summary statistics and histogram, without the raw values."""
        return {
            "count": self.count,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "quartiles": list(self.quartiles),
            "histogram": {"edges": list(self.bin_edges), "counts": list(self.bin_counts)},
        }


def pairwise_distribution(
    items: Sequence,
    metric: Callable[[object, object], float],
    max_pairs: int,
    seed: int,
    bins: int = 20,
) -> Distribution:
    """
    Metric values over sampled pairs of items (never an item with itself).

    Args:
        items: Images or precomputed embeddings
        metric: Pair metric
        max_pairs: Pair budget
        seed: Pair sampling seed
        bins: Histogram bins

    Returns:
        Distribution with the pairs it was computed from
    """
    pairs = sample_pairs(len(items), max_pairs, seed)
    values = [metric(items[i], items[j]) for i, j in pairs]
    return Distribution.from_values(values, pairs, bins)


@dataclass(frozen=True)
class ShiftStatistics:
    """Mean shift (synthetic minus real) and two-sample KS statistic."""

    mean_shift: float
    ks_statistic: float
    ks_pvalue: float


def shift_statistics(real: Distribution, synth: Distribution) -> ShiftStatistics:
    """Compare two distributions."""
    ks = ks_2samp(real.values, synth.values)
    return ShiftStatistics(
        mean_shift=synth.mean - real.mean,
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
    )


@dataclass(frozen=True)
class DiversityReport:
    """Four distributions, their shifts, and two heuristic verdicts.

    structure_preserved: |PSNR mean shift| <= psnr_tolerance_db
    collapse_suspected: synthetic perceptual std < collapse_std_ratio x real perceptual std
    """

    psnr_real: Distribution
    psnr_synth: Distribution
    percep_real: Distribution
    percep_synth: Distribution
    psnr_shift: ShiftStatistics
    percep_shift: ShiftStatistics
    structure_preserved: bool
    collapse_suspected: bool
    config: DiversityConfig

    def to_dict(self) -> dict:
        """JSON-serializable report."""
        return {
            "perceptual_metric": PERCEPTUAL_LABEL,
            "config": asdict(self.config),
            "psnr": {
                "real": self.psnr_real.summary(),
                "synthetic": self.psnr_synth.summary(),
                "shift": asdict(self.psnr_shift),
            },
            "perceptual": {
                "real": self.percep_real.summary(),
                "synthetic": self.percep_synth.summary(),
                "shift": asdict(self.percep_shift),
            },
            "verdict": {
                "structure_preserved": self.structure_preserved,
                "collapse_suspected": self.collapse_suspected,
            },
        }


def compare_diversity(
    real_pos: Dataset,
    synth_pool: Dataset,
    model: ClassifierModel,
    cfg: DiversityConfig,
    seed: int,
) -> DiversityReport:
    """
    Diversity report of a synthetic pool against real positives.

    Both sets use the same pair budget and pairing seed, so equal-size sets
    are compared on identical index pairs.

    Args:
        real_pos: Real rare-class images
        synth_pool: Synthetic images
        model: Trained classifier defining the perceptual space
        cfg: Budget and thresholds
        seed: Pairing seed

    Returns:
        DiversityReport

    Raises:
        InvalidArgumentError: If a set holds fewer than 2 images
        UntrainedModelError: If the classifier is not trained
    """
    for name, ds in (("real", real_pos), ("synthetic", synth_pool)):
        if len(ds) < 2:
            raise InvalidArgumentError(f"{name} set needs at least 2 images, got {len(ds)}")

    real_images = list(real_pos.images())
    synth_images = list(synth_pool.images())
    real_emb = list(embed_images(model, real_pos.images()))
    synth_emb = list(embed_images(model, synth_pool.images()))

    def dist(items: list, metric: Callable) -> Distribution:
        return pairwise_distribution(items, metric, cfg.max_pairs, seed, cfg.bins)

    psnr_real = dist(real_images, psnr)
    psnr_synth = dist(synth_images, psnr)
    percep_real = dist(real_emb, embedding_distance)
    percep_synth = dist(synth_emb, embedding_distance)

    psnr_shift = shift_statistics(psnr_real, psnr_synth)
    percep_shift = shift_statistics(percep_real, percep_synth)
    report = DiversityReport(
        psnr_real=psnr_real,
        psnr_synth=psnr_synth,
        percep_real=percep_real,
        percep_synth=percep_synth,
        psnr_shift=psnr_shift,
        percep_shift=percep_shift,
        structure_preserved=abs(psnr_shift.mean_shift) <= cfg.psnr_tolerance_db,
        collapse_suspected=percep_synth.std < cfg.collapse_std_ratio * percep_real.std,
        config=cfg,
    )
    logger.info(
        "diversity: psnr shift %.3f dB (ks %.3f), perceptual shift %.4f (ks %.3f), collapse=%s",
        psnr_shift.mean_shift, psnr_shift.ks_statistic,
        percep_shift.mean_shift, percep_shift.ks_statistic, report.collapse_suspected,
    )
    return report
