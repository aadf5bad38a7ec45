"""Image directory ingestion and PNG export.

A directory is described by a manifest CSV with header ``path,label``;
paths are relative to the directory and labels are 0 or 1.
"""
import csv
import io
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from src.errors import InvalidArgumentError, ManifestFormatError
from src.persistence import atomic_write_bytes, write_csv
from src.samples import Dataset, Label, LabeledSample, Origin

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ("path", "label")
IMAGE_SUBDIR = "images"

_SIXTEEN_BIT_MODES = frozenset({"I;16", "I;16B", "I;16L", "I;16N", "I"})


def decode_image(path: Path, image_size: int) -> np.ndarray:
    """
    Decode an image file to a grayscale float array in [0, 1].

    16-bit grayscale is scaled by 1/65535, 8-bit and colour images by 1/255
    after grayscale conversion. Images of another size are resized
    bilinearly.

    Args:
        path: Image file
        image_size: Target height and width

    Returns:
        float32 array of shape (image_size, image_size)
    """
    with Image.open(path) as img:
        if img.mode in _SIXTEEN_BIT_MODES:
            arr = np.asarray(img, dtype=np.float64) / 65535.0
        elif img.mode == "F":
            arr = np.asarray(img, dtype=np.float64)
        else:
            arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0

    if arr.shape != (image_size, image_size):
        resized = Image.fromarray(arr.astype(np.float32)).resize(
            (image_size, image_size), Image.Resampling.BILINEAR
        )
        arr = np.asarray(resized, dtype=np.float64)
    return np.clip(arr, 0.0, 1.0).astype(np.float32)


def _parse_label(raw: str | None, manifest: Path, row: int) -> Label:
    value = (raw or "").strip()
    if value not in ("0", "1"):
        raise ManifestFormatError(str(manifest), row, f"label must be 0 or 1, got {raw!r}")
    return Label(int(value))


def load_image_dir(
    path: str | Path,
    manifest: str | Path | None = None,
    image_size: int = 32,
    domain: str = "",
) -> Dataset:
    """
    Load a labelled image directory as a real-origin dataset.

    Args:
        path: Directory the manifest paths are relative to
        manifest: Manifest CSV (defaults to ``<path>/manifest.csv``)
        image_size: Target height and width
        domain: Domain tag of the returned dataset

    Returns:
        Dataset in manifest order; sample ids are the manifest paths

    Raises:
        FileNotFoundError: If the manifest or an image file is missing
        ManifestFormatError: If the header, a label or a path is malformed
    """
    root = Path(path)
    manifest_path = Path(manifest) if manifest is not None else root / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")

    samples: list[LabeledSample] = []
    seen: dict[str, int] = {}
    with open(manifest_path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not set(MANIFEST_HEADER) <= set(reader.fieldnames):
            raise ManifestFormatError(
                str(manifest_path), 1, f"header must contain {','.join(MANIFEST_HEADER)}"
            )
        for row_no, row in enumerate(reader, start=2):
            rel = (row.get("path") or "").strip()
            if not rel:
                raise ManifestFormatError(str(manifest_path), row_no, "empty path")
            if rel in seen:
                raise ManifestFormatError(
                    str(manifest_path), row_no, f"duplicate path {rel!r} (first at row {seen[rel]})"
                )
            seen[rel] = row_no
            label = _parse_label(row.get("label"), manifest_path, row_no)
            file = root / rel
            if not file.is_file():
                raise FileNotFoundError(f"image file not found: {file}")
            image = decode_image(file, image_size)
            samples.append(LabeledSample(
                image=torch.from_numpy(image)[None],
                label=label,
                origin=Origin.REAL,
                id=rel,
            ))

    logger.info("loaded %d images from %s", len(samples), manifest_path)
    return Dataset(tuple(samples), domain, f"image directory {root}")


def encode_png(image: torch.Tensor) -> bytes:
    """Encode a (1, H, W) image in [0, 1] as 8-bit grayscale PNG bytes."""
    if image.dim() != 3 or image.shape[0] != 1:
        raise InvalidArgumentError(f"expected a (1, H, W) image, got {tuple(image.shape)}")
    arr = np.round(image[0].detach().double().clamp(0.0, 1.0).numpy() * 255.0).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(arr).save(buffer, format="PNG")
    return buffer.getvalue()


def export_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """
    Write every sample as ``images/<id>.png`` plus a manifest.

    The manifest is written last, so a directory is loadable only once all
    images are in place.

    Args:
        dataset: Samples to export
        out_dir: Target directory

    Returns:
        Manifest path
    """
    out = Path(out_dir)
    rows = []
    for sample in dataset:
        rel = f"{IMAGE_SUBDIR}/{sample.id}.png"
        atomic_write_bytes(out / rel, encode_png(sample.image))
        rows.append((rel, int(sample.label)))
    manifest = write_csv(out / MANIFEST_NAME, MANIFEST_HEADER, rows)
    logger.info("exported %d images to %s", len(rows), out)
    return manifest
