"""Exception hierarchy shared by the pipeline stages.

Each exception carries a ``category`` string. The CLI prints it as a
machine-parsable prefix and maps it to an exit code.
"""


class RareSynthError(Exception):
    """Base class for all pipeline errors."""

    category: str = "error"


class InvalidArgumentError(RareSynthError, ValueError):
    """Exception raised when an argument violates an operation's precondition."""

    category = "invalid-argument"


class ManifestFormatError(RareSynthError):
    """Exception raised when a labels manifest row cannot be parsed.

    Row numbers are 1-based and count the header as row 1.
    """

    category = "format-error"

    def __init__(self, path: str, row: int, reason: str) -> None:
        self.path = path
        self.row = row
        self.reason = reason
        super().__init__(f"{path}: row {row}: {reason}")

    def __reduce__(self):
        return type(self), (self.path, self.row, self.reason)


class CheckpointFormatError(RareSynthError):
    """Exception raised when a checkpoint archive is malformed or mismatched."""

    category = "format-error"


class ConfigFormatError(RareSynthError):
    """Exception raised when a config document cannot be parsed."""

    category = "format-error"


class UntrainedModelError(RareSynthError):
    """Exception raised when an operation needs a trained classifier."""

    category = "untrained-model"


class RunFailedError(RareSynthError):
    """Exception raised when one sweep run fails; the cause is chained."""

    category = "run-failed"

    def __init__(self, ratio: float, mode: str, fold: int, seed: int, reason: str) -> None:
        self.ratio = ratio
        self.mode = mode
        self.fold = fold
        self.seed = seed
        self.reason = reason
        super().__init__(
            f"run (ratio={ratio:g}, mode={mode}, fold={fold}, seed={seed}) failed: {reason}"
        )

    def __reduce__(self):
        return type(self), (self.ratio, self.mode, self.fold, self.seed, self.reason)


EXIT_CODES: dict[str, int] = {
    "invalid-argument": 2,
    "io-error": 3,
    "format-error": 4,
    "untrained-model": 5,
    "run-failed": 6,
}


def error_category(exc: BaseException) -> str:
    """
    Classify an exception for CLI reporting.

    Args:
        exc: Raised exception

    Returns:
        Category string (``io-error`` for OS-level file errors)
    """
    if isinstance(exc, RareSynthError):
        return exc.category
    if isinstance(exc, OSError):
        return "io-error"
    return "error"


def exit_code_for(exc: BaseException) -> int:
    """Return the process exit code for an exception."""
    return EXIT_CODES.get(error_category(exc), 1)
