"""Tests for errors module."""
import pickle

import pytest

from src.errors import (
    CheckpointFormatError,
    ConfigFormatError,
    InvalidArgumentError,
    ManifestFormatError,
    RareSynthError,
    RunFailedError,
    UntrainedModelError,
    error_category,
    exit_code_for,
)


class TestCategories:
    """Tests for error categories and exit codes."""

    @pytest.mark.parametrize("exc, category, code", [
        (InvalidArgumentError("bad"), "invalid-argument", 2),
        (FileNotFoundError("missing.csv"), "io-error", 3),
        (PermissionError("denied"), "io-error", 3),
        (ManifestFormatError("m.csv", 3, "bad label"), "format-error", 4),
        (CheckpointFormatError("bad magic"), "format-error", 4),
        (ConfigFormatError("bad json"), "format-error", 4),
        (UntrainedModelError("not fitted"), "untrained-model", 5),
        (RunFailedError(1.0, "mixed", 2, 0, "boom"), "run-failed", 6),
        (RuntimeError("other"), "error", 1),
    ])
    def test_category_and_exit_code(self, exc: Exception, category: str, code: int) -> None:
        """Each exception should map to its category and exit code."""
        assert error_category(exc) == category
        assert exit_code_for(exc) == code

    def test_invalid_argument_is_value_error(self) -> None:
        """InvalidArgumentError should be catchable as ValueError."""
        with pytest.raises(ValueError):
            raise InvalidArgumentError("bad")

    def test_all_derive_from_base(self) -> None:
        """Every pipeline error should derive from RareSynthError."""
        for cls in (InvalidArgumentError, ManifestFormatError, CheckpointFormatError,
                    ConfigFormatError, UntrainedModelError, RunFailedError):
            assert issubclass(cls, RareSynthError)


class TestMessages:
    """Tests for descriptive messages."""

    def test_manifest_error_names_path_and_row(self) -> None:
        """Manifest errors should name the file and row."""
        err = ManifestFormatError("data/manifest.csv", 4, "label must be 0 or 1")
        assert str(err) == "data/manifest.csv: row 4: label must be 0 or 1"
        assert err.row == 4

    def test_run_failed_carries_context(self) -> None:
        """Run failures should carry the run coordinates."""
        err = RunFailedError(0.5, "mixed", 3, 1, "loss is NaN")
        assert (err.ratio, err.mode, err.fold, err.seed) == (0.5, "mixed", 3, 1)
        assert "ratio=0.5" in str(err)
        assert "fold=3" in str(err)
        assert "loss is NaN" in str(err)


class TestPickling:
    """Tests for crossing process boundaries."""

    def test_run_failed_survives_pickle(self) -> None:
        """RunFailedError should round-trip through pickle with its fields."""
        err = pickle.loads(pickle.dumps(RunFailedError(2.0, "synth_only", 1, 0, "boom")))
        assert isinstance(err, RunFailedError)
        assert (err.ratio, err.mode, err.fold, err.seed, err.reason) == (2.0, "synth_only", 1, 0, "boom")

    def test_manifest_error_survives_pickle(self) -> None:
        """ManifestFormatError should round-trip through pickle."""
        err = pickle.loads(pickle.dumps(ManifestFormatError("m.csv", 2, "empty path")))
        assert str(err) == "m.csv: row 2: empty path"
