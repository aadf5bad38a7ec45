"""Single-file checkpoint archives.

Layout:
    b"RSCK" | manifest length (u32, little-endian) | manifest JSON (UTF-8)
    | raw little-endian tensor data in manifest order: float32 for floating
      tensors, int64 for integer buffers

The manifest holds the format version, archive kind, tensor names, shapes
and original dtypes, the architecture descriptor, a config snapshot and
metadata. Nothing time-dependent is stored, so saving the same model twice
gives identical bytes.
"""
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from src.classifier import ClassifierConfig, ClassifierModel, build_classifier
from src.errors import CheckpointFormatError, InvalidArgumentError
from src.lora import AdaptedModel, LoRAConfig, attach_lora
from src.persistence import atomic_write_bytes, dumps_json
from src.unet import DiffusionModel, UNetConfig, build_diffusion_model

logger = logging.getLogger(__name__)

MAGIC = b"RSCK"
FORMAT_VERSION = 2
KINDS = ("diffusion", "adapter", "classifier")

_DTYPES = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64}
# on-disk element type per original dtype
_WIRE = {"float32": np.dtype("<f4"), "float64": np.dtype("<f4"), "int64": np.dtype("<i8")}


@dataclass(frozen=True, eq=False)
class CheckpointArchive:
    """Named tensors plus the descriptors needed to rebuild their module."""

    kind: str
    architecture: dict
    tensors: dict[str, torch.Tensor]
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Validate the archive kind."""
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown checkpoint kind {self.kind!r}")

    def manifest(self) -> dict:
        """Manifest document in tensor order."""
        entries = []
        for name, t in self.tensors.items():
            dtype = str(t.dtype).removeprefix("torch.")
            if dtype not in _DTYPES:
                raise InvalidArgumentError(f"tensor {name} has unsupported dtype {dtype}")
            entries.append({"name": name, "shape": list(t.shape), "dtype": dtype})
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "architecture": self.architecture,
            "config": self.config,
            "metadata": self.metadata,
            "tensors": entries,
        }

    def to_bytes(self) -> bytes:
        """Serialize the archive."""
        manifest = dumps_json(self.manifest()).encode("utf-8")
        chunks = [MAGIC, struct.pack("<I", len(manifest)), manifest]
        for t in self.tensors.values():
            wire = _WIRE[str(t.dtype).removeprefix("torch.")]
            chunks.append(t.detach().cpu().contiguous().numpy().astype(wire).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "CheckpointArchive":
        """
        Parse an archive.

        Raises:
            CheckpointFormatError: On bad magic, version, manifest or data length
        """
        head = len(MAGIC) + 4
        if len(data) < head or data[:len(MAGIC)] != MAGIC:
            raise CheckpointFormatError(f"{source}: not a checkpoint archive")
        (length,) = struct.unpack("<I", data[len(MAGIC):head])
        if head + length > len(data):
            raise CheckpointFormatError(f"{source}: truncated manifest")
        try:
            manifest = json.loads(data[head:head + length].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"{source}: unreadable manifest: {exc}") from exc
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointFormatError(
                f"{source}: unsupported format version {manifest.get('format_version')!r}"
            )
        if manifest.get("kind") not in KINDS:
            raise CheckpointFormatError(f"{source}: unknown kind {manifest.get('kind')!r}")

        offset = head + length
        tensors: dict[str, torch.Tensor] = {}
        for entry in manifest.get("tensors", []):
            shape = tuple(int(d) for d in entry["shape"])
            dtype = _DTYPES.get(entry["dtype"])
            if dtype is None:
                raise CheckpointFormatError(f"{source}: tensor {entry['name']} has unknown dtype")
            wire = _WIRE[entry["dtype"]]
            nbytes = wire.itemsize * math.prod(shape)
            if offset + nbytes > len(data):
                raise CheckpointFormatError(f"{source}: truncated data for tensor {entry['name']}")
            values = np.frombuffer(data, dtype=wire, count=math.prod(shape), offset=offset)
            tensors[entry["name"]] = torch.from_numpy(values.astype(wire.newbyteorder("="))).reshape(shape).to(dtype)
            offset += nbytes
        if offset != len(data):
            raise CheckpointFormatError(f"{source}: {len(data) - offset} trailing bytes")

        return cls(
            kind=manifest["kind"],
            architecture=manifest.get("architecture", {}),
            tensors=tensors,
            config=manifest.get("config", {}),
            metadata=manifest.get("metadata", {}),
        )


def save_checkpoint(path: str | Path, archive: CheckpointArchive) -> Path:
    """Write an archive atomically."""
    out = atomic_write_bytes(path, archive.to_bytes())
    logger.info("saved %s checkpoint %s (%d tensors)", archive.kind, out, len(archive.tensors))
    return out


def load_checkpoint(path: str | Path, kind: str | None = None) -> CheckpointArchive:
    """
    Read an archive, optionally requiring a kind.

    Raises:
        FileNotFoundError: If the file is missing
        CheckpointFormatError: If it is malformed or of another kind
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    archive = CheckpointArchive.from_bytes(path.read_bytes(), str(path))
    if kind is not None and archive.kind != kind:
        raise CheckpointFormatError(f"{path}: expected a {kind} checkpoint, found {archive.kind}")
    return archive


def _load_state(module: nn.Module, tensors: dict[str, torch.Tensor], what: str) -> None:
    expected = module.state_dict()
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise CheckpointFormatError(f"{what}: tensor names differ (missing={missing[:3]}, extra={extra[:3]})")
    for name, ref in expected.items():
        if tuple(tensors[name].shape) != tuple(ref.shape):
            raise CheckpointFormatError(
                f"{what}: tensor {name} has shape {tuple(tensors[name].shape)}, "
                f"architecture expects {tuple(ref.shape)}"
            )
    module.load_state_dict(tensors)


def _architecture(cls, descriptor: dict, what: str):
    try:
        return cls(**descriptor)
    except (TypeError, InvalidArgumentError) as exc:
        raise CheckpointFormatError(f"{what}: invalid architecture descriptor: {exc}") from exc


def diffusion_archive(model: DiffusionModel, config: dict | None = None, metadata: dict | None = None) -> CheckpointArchive:
    """Archive a plain (or merged) diffusion model."""
    return CheckpointArchive(
        kind="diffusion",
        architecture=model.config.to_dict(),
        tensors=dict(model.state_dict()),
        config=config or {},
        metadata=metadata or {},
    )


def diffusion_from_archive(archive: CheckpointArchive) -> DiffusionModel:
    """Rebuild a diffusion model, validating tensor shapes against the descriptor."""
    model = build_diffusion_model(_architecture(UNetConfig, archive.architecture, "diffusion checkpoint"), 0)
    _load_state(model, archive.tensors, "diffusion checkpoint")
    model.eval()
    return model


def adapter_archive(adapted: AdaptedModel, config: dict | None = None, metadata: dict | None = None) -> CheckpointArchive:
    """Archive only the LoRA factors, the LoRA config and the base architecture."""
    snapshot = dict(config or {})
    snapshot["lora"] = asdict(adapted.lora_config)
    return CheckpointArchive(
        kind="adapter",
        architecture=adapted.config.to_dict(),
        tensors=adapted.adapter_state(),
        config=snapshot,
        metadata=metadata or {},
    )


def adapter_from_archive(base: DiffusionModel, archive: CheckpointArchive) -> AdaptedModel:
    """
    Attach the archived adapters to a base model.

    Raises:
        CheckpointFormatError: If the base architecture or factor shapes differ
    """
    if archive.architecture != base.config.to_dict():
        raise CheckpointFormatError("adapter checkpoint was trained on a different base architecture")
    try:
        lora_cfg = LoRAConfig(**archive.config["lora"])
    except (KeyError, TypeError, InvalidArgumentError) as exc:
        raise CheckpointFormatError(f"adapter checkpoint has no valid LoRA config: {exc}") from exc
    adapted = attach_lora(base, lora_cfg, torch.Generator().manual_seed(0))
    try:
        adapted.load_adapter_state(archive.tensors)
    except InvalidArgumentError as exc:
        raise CheckpointFormatError(f"adapter checkpoint: {exc}") from exc
    return adapted


def classifier_archive(model: ClassifierModel, config: dict | None = None, metadata: dict | None = None) -> CheckpointArchive:
    """Archive a classifier, recording whether it was trained."""
    meta = dict(metadata or {})
    meta["fitted"] = bool(model.fitted)
    return CheckpointArchive(
        kind="classifier",
        architecture=model.config.to_dict(),
        tensors=dict(model.state_dict()),
        config=config or {},
        metadata=meta,
    )


def classifier_from_archive(archive: CheckpointArchive) -> ClassifierModel:
    """Rebuild a classifier in eval mode."""
    model = build_classifier(_architecture(ClassifierConfig, archive.architecture, "classifier checkpoint"), 0)
    _load_state(model, archive.tensors, "classifier checkpoint")
    model.fitted = bool(archive.metadata.get("fitted", False))
    model.eval()
    return model
