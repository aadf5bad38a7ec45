"""Synthetic-ratio sweep: assemble, train and evaluate over ratios x folds x seeds.

Every run derives its seeds from (global seed, ratio index, mode, fold,
seed index), pins torch to one thread, and shares no mutable state, so
serial and process-parallel execution give identical rows. Rows are
sorted by (mode, ratio, fold, seed) regardless of completion order.
"""
import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from src.assembly import Mode, assemble_training_set
from src.classifier import ClassifierConfig, TrainConfig, predict_scores, train_classifier
from src.errors import InvalidArgumentError, RareSynthError, RunFailedError
from src.metrics import (
    ConfusionCounts,
    FoldPlan,
    confusion_at_threshold,
    f1_precision_recall,
    pr_auc,
    stratified_kfold,
)
from src.persistence import read_csv, write_csv
from src.samples import Dataset, Label, Origin
from src.seeding import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.0, 0.5, 1.0, 2.0, 4.0, 10.0, 20.0)

RESULTS_HEADER = (
    "domain", "mode", "ratio", "fold", "seed", "f1", "pr_auc", "recall", "precision",
    "tp", "fp", "fn", "tn", "wall_seconds",
)
METRICS = ("f1", "pr_auc", "recall", "precision")
AGGREGATE_HEADER = ("domain", "mode", "ratio", "runs") + tuple(
    f"{m}_{stat}" for m in METRICS for stat in ("mean", "std")
)

MODE_CODES = {Mode.MIXED: 0, Mode.SYNTH_ONLY: 1}
FOLD_STREAM = 1
POOL_STREAM = 2


@dataclass(frozen=True)
class SweepConfig:
    """Experiment grid.

    Constraints:
    - ratios non-empty, non-negative and sorted ascending
    - folds >= 2, at least one seed
    - 0 <= threshold <= 1
    """

    domain: str = "tilecrack"
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    include_synth_only: bool = True
    folds: int = 5
    seeds: tuple[int, ...] = (0,)
    threshold: float = 0.5
    refit_lora_per_fold: bool = False
    record_wall_time: bool = False
    pool_size: int = 200

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.ratios:
            raise InvalidArgumentError("ratios must not be empty")
        if any(not (r >= 0 and math.isfinite(r)) for r in self.ratios):
            raise InvalidArgumentError("ratios must be finite and non-negative")
        if list(self.ratios) != sorted(self.ratios):
            raise InvalidArgumentError("ratios must be sorted ascending")
        if len(set(self.ratios)) != len(self.ratios):
            raise InvalidArgumentError("ratios must be distinct")
        if self.folds < 2:
            raise InvalidArgumentError("folds must be >= 2")
        if not self.seeds:
            raise InvalidArgumentError("at least one seed is required")
        if not 0.0 <= self.threshold <= 1.0:
            raise InvalidArgumentError("threshold must lie in [0, 1]")
        if self.pool_size < 0:
            raise InvalidArgumentError("pool_size must be non-negative")
        if self.include_synth_only and self.max_ratio == 0:
            raise InvalidArgumentError("synth-only runs need a positive maximum ratio")

    @property
    def max_ratio(self) -> float:
        """Largest ratio of the grid."""
        return self.ratios[-1]

    def conditions(self) -> list[tuple[int, float, Mode]]:
        """(ratio index, ratio, mode) of every condition, mixed first."""
        grid = [(i, r, Mode.MIXED) for i, r in enumerate(self.ratios)]
        if self.include_synth_only:
            grid.append((len(self.ratios) - 1, self.max_ratio, Mode.SYNTH_ONLY))
        return grid


@dataclass(frozen=True)
class RunResult:
    """Metrics of one (ratio, mode, fold, seed) run."""

    domain: str
    mode: str
    ratio: float
    fold: int
    seed: int
    f1: float
    pr_auc: float
    recall: float
    precision: float
    counts: ConfusionCounts
    wall_seconds: float = 0.0

    @property
    def key(self) -> tuple:
        """Sort key (mode, ratio, fold, seed)."""
        return self.mode, self.ratio, self.fold, self.seed

    def to_row(self) -> tuple:
        """Values in RESULTS_HEADER order."""
        c = self.counts
        return (
            self.domain, self.mode, self.ratio, self.fold, self.seed,
            self.f1, self.pr_auc, self.recall, self.precision,
            c.tp, c.fp, c.fn, c.tn, self.wall_seconds,
        )


@dataclass(frozen=True)
class AggregateRow:
    """Mean and sample standard deviation of each metric over folds x seeds."""

    domain: str
    mode: str
    ratio: float
    runs: int
    stats: tuple[tuple[float, float], ...]

    def metric(self, name: str) -> tuple[float, float]:
        """(mean, std) of one metric."""
        return self.stats[METRICS.index(name)]

    def to_row(self) -> tuple:
        """Values in AGGREGATE_HEADER order."""
        flat = [v for pair in self.stats for v in pair]
        return (self.domain, self.mode, self.ratio, self.runs, *flat)


@dataclass(frozen=True)
class SweepResult:
    """Per-run rows and per-condition aggregates, both in sorted order."""

    results: tuple[RunResult, ...]
    aggregates: tuple[AggregateRow, ...]


@dataclass(frozen=True)
class RunTask:
    """Everything one worker needs; carries no shared mutable state."""

    domain: str
    ratio_index: int
    ratio: float
    mode: Mode
    fold: int
    seed: int
    train_real: Dataset
    test: Dataset
    pool: Dataset
    assembly_seed: int
    run_seed: int
    train_cfg: TrainConfig
    arch: ClassifierConfig | None
    threshold: float
    record_wall_time: bool


def fold_plan(population: Dataset, cfg: SweepConfig, seed: int, global_seed: int) -> FoldPlan:
    """Stratified plan of the real population for one sweep seed; shared by all ratios and modes."""
    return stratified_kfold(
        population.labels().numpy(), cfg.folds, derive_seed(global_seed, FOLD_STREAM, seed)
    )


def required_pool_size(cfg: SweepConfig, population: Dataset, global_seed: int) -> int:
    """
    Synthetic images needed so every ratio is satisfiable on every fold.

    Returns:
        max(cfg.pool_size, floor(max_ratio * P_max)) where P_max is the largest
        number of real positives in any fold's training portion
    """
    labels = population.labels().numpy()
    p_max = 0
    for seed in cfg.seeds:
        plan = fold_plan(population, cfg, seed, global_seed)
        for fold in range(cfg.folds):
            p_max = max(p_max, int(labels[list(plan.train_indices(fold))].sum()))
    return max(cfg.pool_size, math.floor(cfg.max_ratio * p_max), 1)


def check_test_purity(test: Dataset, pool: Dataset) -> None:
    """
    Raise if a test split holds synthetic samples or shares an id with the pool.

    Raises:
        InvalidArgumentError: On any contamination
    """
    n_synth = test.count(origin=Origin.SYNTHETIC)
    if n_synth:
        raise InvalidArgumentError(f"test split contains {n_synth} synthetic samples")
    shared = test.ids & pool.ids
    if shared:
        raise InvalidArgumentError(f"test split shares ids with the synthetic pool: {sorted(shared)[:3]}")


def execute_run(task: RunTask) -> RunResult:
    """
    Assemble, train and evaluate one run on a single torch thread.

    Raises:
        RunFailedError: Wrapping any failure with the run's coordinates
    """
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    start = time.perf_counter()
    try:
        check_test_purity(task.test, task.pool)
        train = assemble_training_set(task.train_real, task.pool, task.ratio, task.mode, task.assembly_seed)
        model, _ = train_classifier(train, replace(task.train_cfg, seed=task.run_seed), task.arch)
        scores = predict_scores(model, task.test.images()).numpy()
        labels = task.test.labels().numpy()
        counts = confusion_at_threshold(scores, labels, task.threshold)
        f1, precision, recall = f1_precision_recall(counts)
        ap = pr_auc(scores, labels)
    except RunFailedError:
        raise
    except (RareSynthError, ValueError, RuntimeError) as exc:
        raise RunFailedError(task.ratio, task.mode.value, task.fold, task.seed, str(exc)) from exc
    finally:
        torch.set_num_threads(threads)

    elapsed = time.perf_counter() - start if task.record_wall_time else 0.0
    logger.debug(
        "run %s ratio=%g fold=%d seed=%d: f1=%.3f pr_auc=%.3f",
        task.mode.value, task.ratio, task.fold, task.seed, f1, ap,
    )
    return RunResult(
        domain=task.domain,
        mode=task.mode.value,
        ratio=task.ratio,
        fold=task.fold,
        seed=task.seed,
        f1=f1,
        pr_auc=ap,
        recall=recall,
        precision=precision,
        counts=counts,
        wall_seconds=elapsed,
    )


PoolProvider = Callable[[int, int, Dataset], Dataset]


def plan_runs(
    cfg: SweepConfig,
    population: Dataset,
    pool_for: PoolProvider,
    train_cfg: TrainConfig,
    arch: ClassifierConfig | None = None,
    global_seed: int = 0,
) -> list[RunTask]:
    """
    Expand the grid into run tasks.

    Args:
        cfg: Sweep grid
        population: Real samples of both classes (never synthetic)
        pool_for: Returns the synthetic pool for (seed index, fold, fold's real training set)
        train_cfg: Classifier training config (its seed is replaced per run)
        arch: Classifier architecture
        global_seed: Root of all derived seeds

    Returns:
        Tasks ordered by (seed index, fold, condition)
    """
    if population.count(origin=Origin.SYNTHETIC):
        raise InvalidArgumentError("the evaluation population must be real samples only")
    for label in Label:
        if population.count(label=label) < cfg.folds:
            raise InvalidArgumentError(
                f"population has fewer {label.name.lower()} samples than folds ({cfg.folds})"
            )

    tasks: list[RunTask] = []
    for seed_index, seed in enumerate(cfg.seeds):
        plan = fold_plan(population, cfg, seed, global_seed)
        for fold in range(cfg.folds):
            train_real = population.subset(plan.train_indices(fold))
            test = population.subset(plan.test_indices[fold])
            pool = pool_for(seed_index, fold, train_real)
            assembly_seed = derive_seed(global_seed, POOL_STREAM, fold, seed_index)
            for ratio_index, ratio, mode in cfg.conditions():
                tasks.append(RunTask(
                    domain=cfg.domain,
                    ratio_index=ratio_index,
                    ratio=ratio,
                    mode=mode,
                    fold=fold,
                    seed=seed,
                    train_real=train_real,
                    test=test,
                    pool=pool,
                    assembly_seed=assembly_seed,
                    run_seed=derive_seed(global_seed, ratio_index, MODE_CODES[mode], fold, seed_index),
                    train_cfg=train_cfg,
                    arch=arch,
                    threshold=cfg.threshold,
                    record_wall_time=cfg.record_wall_time,
                ))
    return tasks


def run_sweep(
    cfg: SweepConfig,
    population: Dataset,
    pool_for: PoolProvider,
    train_cfg: TrainConfig,
    arch: ClassifierConfig | None = None,
    global_seed: int = 0,
    jobs: int = 1,
) -> SweepResult:
    """
    Run every (ratio, mode, fold, seed) condition and aggregate.

    For a given seed the fold test splits are the same for every ratio and
    mode, and consist of real samples only.

    Args:
        cfg: Sweep grid
        population: Real samples of both classes
        pool_for: Synthetic pool provider (see plan_runs)
        train_cfg: Classifier training config
        arch: Classifier architecture
        global_seed: Root of all derived seeds
        jobs: Worker processes (1 runs in-process)

    Returns:
        SweepResult with sorted per-run rows and aggregates

    Raises:
        RunFailedError: If any run fails
    """
    if jobs < 1:
        raise InvalidArgumentError("jobs must be >= 1")
    tasks = plan_runs(cfg, population, pool_for, train_cfg, arch, global_seed)
    logger.info("sweep %s: %d runs on %d worker(s)", cfg.domain, len(tasks), jobs)

    if jobs == 1:
        results = [execute_run(task) for task in tasks]
    else:
        context = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=context) as pool:
            results = list(pool.map(execute_run, tasks))

    results.sort(key=lambda r: r.key)
    return SweepResult(results=tuple(results), aggregates=tuple(aggregate(results)))


def aggregate(results: Sequence[RunResult]) -> list[AggregateRow]:
    """
    Mean and sample standard deviation (ddof=1; 0 for a single run) per (domain, mode, ratio).

    Returns:
        Rows sorted by (mode, ratio)
    """
    groups: dict[tuple[str, str, float], list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.domain, r.mode, r.ratio), []).append(r)

    rows = []
    for (domain, mode, ratio), runs in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][0])):
        stats = []
        for name in METRICS:
            values = np.array([getattr(r, name) for r in runs], dtype=np.float64)
            std = float(values.std(ddof=1)) if values.size > 1 else 0.0
            stats.append((float(values.mean()), std))
        rows.append(AggregateRow(domain, mode, ratio, len(runs), tuple(stats)))
    return rows


def write_results(path: str | Path, results: Sequence[RunResult]) -> Path:
    """Write the per-run results CSV."""
    return write_csv(path, RESULTS_HEADER, [r.to_row() for r in results])


def write_aggregates(path: str | Path, rows: Sequence[AggregateRow]) -> Path:
    """Write the aggregate CSV."""
    return write_csv(path, AGGREGATE_HEADER, [r.to_row() for r in rows])


def read_results(path: str | Path) -> list[RunResult]:
    """
    Read a results CSV written by write_results.

    Raises:
        FileNotFoundError: If the file is missing
        InvalidArgumentError: If the header or a value is malformed
    """
    header, rows = read_csv(path)
    if tuple(header) != RESULTS_HEADER:
        raise InvalidArgumentError(f"{path}: unexpected results header {header}")
    results = []
    for row_no, row in enumerate(rows, start=2):
        try:
            results.append(RunResult(
                domain=row["domain"],
                mode=row["mode"],
                ratio=float(row["ratio"]),
                fold=int(row["fold"]),
                seed=int(row["seed"]),
                f1=float(row["f1"]),
                pr_auc=float(row["pr_auc"]),
                recall=float(row["recall"]),
                precision=float(row["precision"]),
                counts=ConfusionCounts(
                    tp=int(row["tp"]), fp=int(row["fp"]), fn=int(row["fn"]), tn=int(row["tn"])
                ),
                wall_seconds=float(row["wall_seconds"]),
            ))
        except (TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"{path}: row {row_no}: {exc}") from exc
    return results
