"""Tests for seeding module."""
from src.seeding import derive_seed


class TestDeriveSeed:
    """Tests for derive_seed."""

    def test_deterministic(self) -> None:
        """Same parts should give the same seed."""
        assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)

    def test_order_matters(self) -> None:
        """Swapped parts should give a different seed."""
        assert derive_seed(1, 2) != derive_seed(2, 1)

    def test_range(self) -> None:
        """Seeds should be 32-bit non-negative integers."""
        for parts in [(0,), (7, 3), (123456, 0, 9)]:
            seed = derive_seed(*parts)
            assert isinstance(seed, int)
            assert 0 <= seed < 2 ** 32

    def test_streams_differ(self) -> None:
        """Distinct streams of the same global seed should differ."""
        seeds = {derive_seed(0, stream) for stream in range(20)}
        assert len(seeds) == 20
