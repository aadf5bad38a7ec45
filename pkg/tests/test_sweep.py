"""Tests for sweep module."""
from pathlib import Path

import pytest
import torch

from src.classifier import ClassifierConfig, TrainConfig
from src.errors import InvalidArgumentError, RunFailedError
from src.metrics import ConfusionCounts
from src.samples import Dataset, LabeledSample, Origin
from src.sweep import (
    AGGREGATE_HEADER,
    RESULTS_HEADER,
    RunResult,
    SweepConfig,
    aggregate,
    check_test_purity,
    plan_runs,
    read_results,
    required_pool_size,
    run_sweep,
    write_aggregates,
    write_results,
)

ARCH = ClassifierConfig(image_size=8, widths=(4,))
TRAIN = TrainConfig(epochs=1, batch_size=16)


def population(n_neg: int = 20, n_pos: int = 6) -> Dataset:
    g = torch.Generator().manual_seed(0)
    samples = [
        LabeledSample(0.2 + 0.1 * torch.rand(1, 8, 8, generator=g), 0, "real", f"neg-{i}") for i in range(n_neg)
    ]
    samples += [
        LabeledSample(0.7 + 0.1 * torch.rand(1, 8, 8, generator=g), 1, "real", f"pos-{i}") for i in range(n_pos)
    ]
    return Dataset(tuple(samples), domain="lungspot")


def synthetic_pool(n: int = 30) -> Dataset:
    g = torch.Generator().manual_seed(1)
    return Dataset(tuple(
        LabeledSample(0.7 + 0.1 * torch.rand(1, 8, 8, generator=g), 1, "synthetic", f"synth-{i:05d}")
        for i in range(n)
    ), domain="lungspot")


def shared_pool(pool: Dataset):
    def pool_for(seed_index: int, fold: int, real_train: Dataset) -> Dataset:
        return pool
    return pool_for


def result(mode: str = "mixed", ratio: float = 1.0, fold: int = 0, seed: int = 0, f1: float = 0.5) -> RunResult:
    return RunResult(
        domain="lungspot", mode=mode, ratio=ratio, fold=fold, seed=seed,
        f1=f1, pr_auc=0.6, recall=0.7, precision=0.4,
        counts=ConfusionCounts(tp=1, fp=2, fn=0, tn=3),
    )


class TestSweepConfig:
    """Tests for SweepConfig validation."""

    def test_conditions_mixed_then_synth_only(self) -> None:
        """Conditions should list every mixed ratio, then synth-only at the maximum."""
        cfg = SweepConfig(ratios=[0, 1, 2])
        assert [(i, r, m.value) for i, r, m in cfg.conditions()] == [
            (0, 0.0, "mixed"), (1, 1.0, "mixed"), (2, 2.0, "mixed"), (2, 2.0, "synth_only"),
        ]

    @pytest.mark.parametrize("kwargs, message", [
        ({"ratios": []}, "empty"),
        ({"ratios": [1, 0]}, "sorted"),
        ({"ratios": [0, 1, 1]}, "distinct"),
        ({"ratios": [-1, 0]}, "non-negative"),
        ({"folds": 1}, "folds"),
        ({"seeds": []}, "seed"),
        ({"threshold": 1.5}, "threshold"),
        ({"ratios": [0], "include_synth_only": True}, "synth-only"),
    ])
    def test_invalid_values_raise_error(self, kwargs: dict, message: str) -> None:
        """Invalid grids should be rejected."""
        with pytest.raises(InvalidArgumentError, match=message):
            SweepConfig(**kwargs)


class TestPlanRuns:
    """Tests for plan_runs."""

    def test_grid_size_and_shared_test_splits(self) -> None:
        """Every condition should see the same real-only test split per fold."""
        cfg = SweepConfig(domain="lungspot", ratios=[0, 1], folds=3, seeds=[0, 1])
        tasks = plan_runs(cfg, population(), shared_pool(synthetic_pool()), TRAIN, ARCH)
        assert len(tasks) == 3 * 3 * 2
        by_fold: dict[tuple[int, int], set] = {}
        for task in tasks:
            by_fold.setdefault((task.seed, task.fold), set()).add(task.test.ids)
            assert task.test.count(origin=Origin.SYNTHETIC) == 0
            assert not task.test.ids & task.train_real.ids
        assert all(len(ids) == 1 for ids in by_fold.values())

    def test_folds_cover_population(self) -> None:
        """Each seed's test splits should partition the population."""
        cfg = SweepConfig(ratios=[0, 1], folds=4, include_synth_only=False)
        pop = population()
        tasks = plan_runs(cfg, pop, shared_pool(synthetic_pool()), TRAIN, ARCH)
        covered = set()
        for task in tasks:
            covered |= task.test.ids
        assert covered == pop.ids

    def test_assembly_seed_shared_across_ratios(self) -> None:
        """Pool selection seeds should depend on fold and seed only."""
        cfg = SweepConfig(ratios=[0, 1, 2], folds=2)
        tasks = plan_runs(cfg, population(), shared_pool(synthetic_pool()), TRAIN, ARCH)
        for fold in range(2):
            seeds = {t.assembly_seed for t in tasks if t.fold == fold}
            assert len(seeds) == 1
        assert len({t.run_seed for t in tasks}) == len(tasks)

    def test_synthetic_population_raises_error(self) -> None:
        """The evaluation population must be real."""
        cfg = SweepConfig(ratios=[0, 1], folds=2)
        mixed = Dataset(population().samples + synthetic_pool(2).samples)
        with pytest.raises(InvalidArgumentError, match="real samples only"):
            plan_runs(cfg, mixed, shared_pool(synthetic_pool()), TRAIN, ARCH)

    def test_too_few_positives_raises_error(self) -> None:
        """Each class needs at least one sample per fold."""
        cfg = SweepConfig(ratios=[0, 1], folds=5)
        with pytest.raises(InvalidArgumentError, match="fewer positive samples than folds"):
            plan_runs(cfg, population(20, 3), shared_pool(synthetic_pool()), TRAIN, ARCH)


class TestCheckTestPurity:
    """Tests for check_test_purity."""

    def test_shared_id_raises_error(self) -> None:
        """A test split sharing an id with the pool should be rejected."""
        pool = synthetic_pool(3)
        test = Dataset((LabeledSample(torch.zeros(1, 8, 8), 1, "real", "synth-00001"),))
        with pytest.raises(InvalidArgumentError, match="shares ids"):
            check_test_purity(test, pool)

    def test_synthetic_test_raises_error(self) -> None:
        """A test split holding synthetic samples should be rejected."""
        with pytest.raises(InvalidArgumentError, match="synthetic samples"):
            check_test_purity(synthetic_pool(2), synthetic_pool(0))


class TestRequiredPoolSize:
    """Tests for required_pool_size."""

    def test_covers_largest_fold(self) -> None:
        """The pool should cover max_ratio times the largest training positive count."""
        cfg = SweepConfig(ratios=[0, 2], folds=3, pool_size=0)
        # 6 positives over 3 folds leaves 4 in each training portion
        assert required_pool_size(cfg, population(), 0) == 8

    def test_configured_minimum(self) -> None:
        """pool_size should act as a lower bound."""
        cfg = SweepConfig(ratios=[0, 1], folds=3, pool_size=50)
        assert required_pool_size(cfg, population(), 0) == 50


class TestRunSweep:
    """Tests for run_sweep."""

    def test_rows_sorted_and_complete(self) -> None:
        """Results should hold one sorted row per (condition, fold, seed)."""
        cfg = SweepConfig(domain="lungspot", ratios=[0, 1], folds=2, seeds=[0])
        out = run_sweep(cfg, population(), shared_pool(synthetic_pool()), TRAIN, ARCH)
        assert len(out.results) == 3 * 2
        assert [r.key for r in out.results] == sorted(r.key for r in out.results)
        assert {r.mode for r in out.results} == {"mixed", "synth_only"}
        assert all(r.wall_seconds == 0.0 for r in out.results)
        assert all(r.counts.total == 13 for r in out.results)
        assert len(out.aggregates) == 3

    def test_reproducible(self) -> None:
        """Two serial sweeps with the same seed should give identical rows."""
        cfg = SweepConfig(ratios=[0, 1], folds=2, include_synth_only=False)
        a = run_sweep(cfg, population(), shared_pool(synthetic_pool()), TRAIN, ARCH, global_seed=5)
        b = run_sweep(cfg, population(), shared_pool(synthetic_pool()), TRAIN, ARCH, global_seed=5)
        assert [r.to_row() for r in a.results] == [r.to_row() for r in b.results]

    def test_parallel_matches_serial(self) -> None:
        """Worker processes should reproduce the serial rows exactly."""
        cfg = SweepConfig(ratios=[0, 1], folds=2, include_synth_only=False)
        serial = run_sweep(cfg, population(), shared_pool(synthetic_pool()), TRAIN, ARCH, jobs=1)
        parallel = run_sweep(cfg, population(), shared_pool(synthetic_pool()), TRAIN, ARCH, jobs=2)
        assert [r.to_row() for r in serial.results] == [r.to_row() for r in parallel.results]

    def test_small_pool_fails_with_context(self) -> None:
        """An undersized pool should surface as RunFailedError with the run coordinates."""
        cfg = SweepConfig(ratios=[0, 4], folds=2, include_synth_only=False)
        with pytest.raises(RunFailedError, match="ratio=4") as info:
            run_sweep(cfg, population(), shared_pool(synthetic_pool(3)), TRAIN, ARCH)
        assert isinstance(info.value.__cause__, InvalidArgumentError)
        assert info.value.mode == "mixed"

    def test_bad_jobs_raises_error(self) -> None:
        """jobs must be positive."""
        cfg = SweepConfig(ratios=[0, 1], folds=2)
        with pytest.raises(InvalidArgumentError, match="jobs"):
            run_sweep(cfg, population(), shared_pool(synthetic_pool()), TRAIN, ARCH, jobs=0)


class TestAggregate:
    """Tests for aggregate."""

    def test_mean_and_sample_std(self) -> None:
        """Aggregates should use the mean and ddof=1 standard deviation."""
        rows = aggregate([result(fold=0, f1=0.2), result(fold=1, f1=0.4), result(fold=2, f1=0.6)])
        assert len(rows) == 1
        mean, std = rows[0].metric("f1")
        assert mean == pytest.approx(0.4)
        assert std == pytest.approx(0.2)
        assert rows[0].runs == 3

    def test_single_run_has_zero_std(self) -> None:
        """A single run should report std 0."""
        rows = aggregate([result()])
        assert rows[0].metric("pr_auc") == (0.6, 0.0)

    def test_sorted_by_mode_then_ratio(self) -> None:
        """Rows should be ordered by mode, then ratio."""
        rows = aggregate([result("synth_only", 2.0), result("mixed", 2.0), result("mixed", 0.5)])
        assert [(r.mode, r.ratio) for r in rows] == [("mixed", 0.5), ("mixed", 2.0), ("synth_only", 2.0)]


class TestResultFiles:
    """Tests for result CSV files."""

    def test_write_and_read(self, tmp_path: Path) -> None:
        """Results written to CSV should read back with the same fields."""
        rows = [result(fold=0, f1=0.25), result("synth_only", 2.0, 1, 0, 0.125)]
        path = write_results(tmp_path / "results.csv", rows)
        assert path.read_text().splitlines()[0] == ",".join(RESULTS_HEADER)
        back = read_results(path)
        assert [r.to_row() for r in back] == [r.to_row() for r in rows]

    def test_aggregate_header(self, tmp_path: Path) -> None:
        """The aggregate CSV should start with domain, mode, ratio and runs."""
        path = write_aggregates(tmp_path / "aggregate.csv", aggregate([result()]))
        header = path.read_text().splitlines()[0].split(",")
        assert tuple(header) == AGGREGATE_HEADER
        assert header[:5] == ["domain", "mode", "ratio", "runs", "f1_mean"]

    def test_bad_header_raises_error(self, tmp_path: Path) -> None:
        """A CSV with another header should be rejected."""
        path = tmp_path / "x.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(InvalidArgumentError, match="unexpected results header"):
            read_results(path)
