"""Atomic file writes and the CSV/JSON conventions shared by all outputs.

A file is first written next to its final path under a hidden temporary
name, then moved into place with os.replace, so readers never observe a
partially written artifact.
"""
import csv
import io
import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

logger = logging.getLogger(__name__)


def _temp_path(path: Path) -> Path:
    return path.with_name(f".{path.name}.tmp-{os.getpid()}")


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """
    Write bytes to path atomically, creating parent directories.

    Args:
        path: Final path
        data: File content

    Returns:
        The final path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = _temp_path(path)
    try:
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    logger.debug("wrote %s (%d bytes)", path, len(data))
    return path


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write UTF-8 text atomically (newlines are written as-is)."""
    return atomic_write_bytes(path, text.encode("utf-8"))


def dumps_json(obj: Any) -> str:
    """Canonical JSON text: sorted keys, indent 2, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: str | Path, obj: Any) -> Path:
    """Write obj as canonical JSON atomically."""
    return atomic_write_text(path, dumps_json(obj))


def format_float(value: float) -> str:
    """Serialize a float with 6 significant digits."""
    return f"{value:.6g}"


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """
    Render rows as CSV text with ``\\n`` line endings.

    Floats are formatted with format_float; other values with str().
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a CSV file atomically."""
    return atomic_write_text(path, csv_text(header, rows))


def read_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    """
    Read a CSV file with a header row.

    Args:
        path: CSV path

    Returns:
        Tuple of (header, rows as dicts)

    Raises:
        FileNotFoundError: If the file does not exist
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        return list(reader.fieldnames or []), rows
