"""Tests for samples module."""
import pytest
import torch

from src.errors import InvalidArgumentError
from src.samples import Dataset, Label, LabeledSample, Origin, concat


def make_sample(sample_id: str, label: int = 0, origin: str = "real", size: int = 4) -> LabeledSample:
    return LabeledSample(image=torch.zeros(1, size, size), label=label, origin=origin, id=sample_id)


class TestLabeledSample:
    """Tests for LabeledSample."""

    def test_normalizes_enums(self) -> None:
        """Raw label and origin values should become enums."""
        s = make_sample("a", 1, "synthetic")
        assert s.label is Label.POSITIVE
        assert s.origin is Origin.SYNTHETIC

    def test_synthetic_negative_raises_error(self) -> None:
        """Synthetic samples must be positive."""
        with pytest.raises(InvalidArgumentError, match="must be labeled positive"):
            make_sample("a", 0, "synthetic")

    def test_bad_shape_raises_error(self) -> None:
        """Images must be single-channel (1, H, W)."""
        with pytest.raises(InvalidArgumentError, match="shape"):
            LabeledSample(image=torch.zeros(3, 4, 4), label=0, origin="real", id="a")

    def test_non_finite_raises_error(self) -> None:
        """NaN pixels should be rejected."""
        image = torch.zeros(1, 4, 4)
        image[0, 1, 1] = float("nan")
        with pytest.raises(InvalidArgumentError, match="non-finite"):
            LabeledSample(image=image, label=0, origin="real", id="a")


class TestDataset:
    """Tests for Dataset."""

    def test_duplicate_ids_raise_error(self) -> None:
        """Ids must be unique within a dataset."""
        with pytest.raises(InvalidArgumentError, match="duplicate sample id in dataset: x"):
            Dataset((make_sample("x"), make_sample("y"), make_sample("x")))

    def test_mixed_shapes_raise_error(self) -> None:
        """All images must share one shape."""
        with pytest.raises(InvalidArgumentError, match="expected"):
            Dataset((make_sample("a", size=4), make_sample("b", size=5)))

    def test_counts_and_filters(self) -> None:
        """count and filter should respect label and origin."""
        ds = Dataset((
            make_sample("n1"), make_sample("n2"), make_sample("p1", 1),
            make_sample("s1", 1, "synthetic"),
        ), domain="tilecrack")
        assert ds.count() == 4
        assert ds.count(label=Label.POSITIVE) == 2
        assert ds.count(label=Label.POSITIVE, origin=Origin.REAL) == 1
        positives = ds.filter(label=Label.POSITIVE)
        assert [s.id for s in positives] == ["p1", "s1"]
        assert positives.domain == "tilecrack"

    def test_subset_keeps_given_order(self) -> None:
        """subset should return samples in index order given."""
        ds = Dataset(tuple(make_sample(f"s{i}") for i in range(4)))
        assert [s.id for s in ds.subset([3, 0, 2])] == ["s3", "s0", "s2"]

    def test_images_and_labels(self) -> None:
        """images and labels should stack into tensors."""
        ds = Dataset((make_sample("a"), make_sample("b", 1)))
        assert ds.images().shape == (2, 1, 4, 4)
        assert ds.labels().tolist() == [0, 1]
        assert ds.labels().dtype == torch.int64
        assert ds.image_shape == (1, 4, 4)
        assert ds.ids == frozenset({"a", "b"})

    def test_empty_dataset(self) -> None:
        """An empty dataset should have no shape."""
        ds = Dataset(())
        assert len(ds) == 0
        assert ds.image_shape == ()


class TestConcat:
    """Tests for concat."""

    def test_concat_preserves_order_and_domain(self) -> None:
        """Samples should follow input order; the first domain wins."""
        a = Dataset((make_sample("a"),), domain="lungspot")
        b = Dataset((make_sample("b"),), domain="lungspot")
        joined = concat([a, b], provenance="joined")
        assert [s.id for s in joined] == ["a", "b"]
        assert joined.domain == "lungspot"
        assert joined.provenance == "joined"

    def test_concat_overlapping_ids_raises_error(self) -> None:
        """Overlapping ids should be rejected."""
        a = Dataset((make_sample("a"),))
        with pytest.raises(InvalidArgumentError, match="duplicate"):
            concat([a, a])
