"""Tests for assembly module."""
import pytest
import torch

from src.assembly import Mode, assemble_training_set, parse_mode, pool_order, synthetic_count
from src.errors import InvalidArgumentError
from src.samples import Dataset, Label, LabeledSample, Origin


def real_train(n_neg: int = 10, n_pos: int = 4) -> Dataset:
    samples = [LabeledSample(torch.zeros(1, 4, 4), 0, "real", f"neg-{i}") for i in range(n_neg)]
    samples += [LabeledSample(torch.ones(1, 4, 4), 1, "real", f"pos-{i}") for i in range(n_pos)]
    return Dataset(tuple(samples), domain="tilecrack")


def pool(n: int = 20) -> Dataset:
    return Dataset(tuple(
        LabeledSample(torch.full((1, 4, 4), 0.5), 1, "synthetic", f"synth-{i:05d}") for i in range(n)
    ), domain="tilecrack")


class TestSyntheticCount:
    """Tests for synthetic_count."""

    @pytest.mark.parametrize("ratio, p, expected", [
        (0.0, 50, 0), (0.5, 50, 25), (0.5, 7, 3), (1.0, 7, 7), (2.5, 3, 7), (20.0, 50, 1000),
    ])
    def test_floor(self, ratio: float, p: int, expected: int) -> None:
        """Counts should be floor(ratio * P)."""
        assert synthetic_count(ratio, p) == expected


class TestPoolOrder:
    """Tests for pool_order."""

    def test_permutation_and_determinism(self) -> None:
        """pool_order should be a seeded permutation."""
        order = pool_order(10, 3)
        assert sorted(order.tolist()) == list(range(10))
        assert order.tolist() == pool_order(10, 3).tolist()


class TestAssembleTrainingSet:
    """Tests for assemble_training_set."""

    def test_ratio_zero_mixed_is_real_train(self) -> None:
        """Ratio 0 in mixed mode should return the real set unchanged."""
        real = real_train()
        assert assemble_training_set(real, pool(), 0.0, "mixed", 0) is real

    def test_mixed_counts(self) -> None:
        """Mixed mode should add floor(ratio * P) synthetic positives."""
        ds = assemble_training_set(real_train(), pool(), 2.0, Mode.MIXED, 0)
        assert ds.count(origin=Origin.SYNTHETIC) == 8
        assert ds.count(label=Label.POSITIVE, origin=Origin.REAL) == 4
        assert ds.count(label=Label.NEGATIVE) == 10

    def test_synth_only_drops_real_positives(self) -> None:
        """synth_only should keep negatives and synthetic positives only."""
        ds = assemble_training_set(real_train(), pool(), 1.5, "synth_only", 0)
        assert ds.count(label=Label.POSITIVE, origin=Origin.REAL) == 0
        assert ds.count(origin=Origin.SYNTHETIC) == 6
        assert ds.count(label=Label.NEGATIVE) == 10

    def test_selection_is_prefix_across_ratios(self) -> None:
        """Smaller ratios should select a prefix of larger ones under the same seed."""
        small = assemble_training_set(real_train(), pool(), 1.0, "mixed", 7)
        large = assemble_training_set(real_train(), pool(), 3.0, "mixed", 7)
        small_ids = [s.id for s in small if s.origin is Origin.SYNTHETIC]
        large_ids = [s.id for s in large if s.origin is Origin.SYNTHETIC]
        assert large_ids[: len(small_ids)] == small_ids

    def test_pool_too_small_raises_error(self) -> None:
        """Requests beyond the pool should name required and available counts."""
        with pytest.raises(InvalidArgumentError, match="requires 40, available 20"):
            assemble_training_set(real_train(), pool(), 10.0, "mixed", 0)

    def test_negative_ratio_raises_error(self) -> None:
        """Negative ratios should be rejected."""
        with pytest.raises(InvalidArgumentError, match="ratio"):
            assemble_training_set(real_train(), pool(), -1.0, "mixed", 0)

    def test_real_pool_raises_error(self) -> None:
        """Pools must hold synthetic samples only."""
        with pytest.raises(InvalidArgumentError, match="pool must contain"):
            assemble_training_set(real_train(), real_train(), 1.0, "mixed", 0)

    def test_unknown_mode_raises_error(self) -> None:
        """Unknown modes should be rejected."""
        with pytest.raises(InvalidArgumentError, match="unknown mode"):
            parse_mode("real_only")
