"""Labeled samples and datasets, the unit of all assembly and evaluation."""
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import torch

from src.errors import InvalidArgumentError


class Label(IntEnum):
    """Binary class label."""

    NEGATIVE = 0
    POSITIVE = 1


class ClassToken(IntEnum):
    """Conditioning tokens of the diffusion model's class-embedding table."""

    NEGATIVE = 0
    POSITIVE = 1
    UNCONDITIONAL = 2


class Origin(Enum):
    """Where a sample came from."""

    REAL = "real"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """One image (1 x H x W, values in [0, 1]) with label, origin and id.

    Invariant: origin=synthetic implies label=positive.
    """

    image: torch.Tensor
    label: Label
    origin: Origin
    id: str

    def __post_init__(self) -> None:
        """Validate the sample."""
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "origin", Origin(self.origin))
        if self.origin is Origin.SYNTHETIC and self.label is not Label.POSITIVE:
            raise InvalidArgumentError(f"synthetic sample {self.id} must be labeled positive")
        if self.image.dim() != 3 or self.image.shape[0] != 1:
            raise InvalidArgumentError(
                f"sample {self.id} image must have shape (1, H, W), got {tuple(self.image.shape)}"
            )
        if not torch.isfinite(self.image).all():
            raise InvalidArgumentError(f"sample {self.id} has non-finite pixels")


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered, immutable collection of samples sharing one image shape."""

    samples: tuple[LabeledSample, ...]
    domain: str = ""
    provenance: str = ""
    _ids: frozenset[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Validate id uniqueness and shape consistency."""
        ids = [s.id for s in self.samples]
        unique = frozenset(ids)
        if len(unique) != len(ids):
            dup = next(i for i, n in Counter(ids).items() if n > 1)
            raise InvalidArgumentError(f"duplicate sample id in dataset: {dup}")
        if self.samples:
            shape = self.samples[0].image.shape
            for s in self.samples:
                if s.image.shape != shape:
                    raise InvalidArgumentError(
                        f"sample {s.id} has shape {tuple(s.image.shape)}, expected {tuple(shape)}"
                    )
        object.__setattr__(self, "_ids", unique)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, index: int) -> LabeledSample:
        return self.samples[index]

    @property
    def ids(self) -> frozenset[str]:
        """Set of sample ids."""
        return self._ids

    @property
    def image_shape(self) -> tuple[int, ...]:
        """Shared (1, H, W) image shape; empty tuple for an empty dataset."""
        return tuple(self.samples[0].image.shape) if self.samples else ()

    def images(self) -> torch.Tensor:
        """Stack all images into an (N, 1, H, W) tensor."""
        return torch.stack([s.image for s in self.samples])

    def labels(self) -> torch.Tensor:
        """Return labels as an int64 tensor of shape (N,)."""
        return torch.tensor([int(s.label) for s in self.samples], dtype=torch.int64)

    def count(self, label: Label | None = None, origin: Origin | None = None) -> int:
        """Count samples matching an optional label and origin."""
        return sum(
            1 for s in self.samples
            if (label is None or s.label is label) and (origin is None or s.origin is origin)
        )

    def filter(self, label: Label | None = None, origin: Origin | None = None) -> "Dataset":
        """Return the samples matching an optional label and origin, order kept."""
        kept = tuple(
            s for s in self.samples
            if (label is None or s.label is label) and (origin is None or s.origin is origin)
        )
        return self.derive(kept)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        """Return the samples at the given indices, in the given order."""
        return self.derive(tuple(self.samples[i] for i in indices))

    def derive(self, samples: Sequence[LabeledSample], provenance: str | None = None) -> "Dataset":
        """Build a dataset in the same domain from other samples."""
        return Dataset(
            samples=tuple(samples),
            domain=self.domain,
            provenance=self.provenance if provenance is None else provenance,
        )


def concat(datasets: Sequence[Dataset], provenance: str = "") -> Dataset:
    """
    Concatenate datasets in order.

    Args:
        datasets: Datasets to join (ids must stay unique)
        provenance: Provenance note for the result

    Returns:
        Joined dataset with the first input's domain tag
    """
    samples: list[LabeledSample] = []
    for ds in datasets:
        samples.extend(ds.samples)
    domain = datasets[0].domain if datasets else ""
    return Dataset(samples=tuple(samples), domain=domain, provenance=provenance)
