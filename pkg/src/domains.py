"""Procedural imbalanced toy domains and train/LoRA/test splitting.

Two domains share one recipe: negatives are a smoothed noise texture;
positives draw the same texture (same seed) and superimpose the rare
structure on it.

- tilecrack: dark polylines crossing a tile surface
- lungspot:  a bright Gaussian blob on a shaded lung field
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np
import torch
from PIL import Image, ImageDraw
from scipy.ndimage import gaussian_filter

from src.errors import InvalidArgumentError
from src.samples import Dataset, Label, LabeledSample, Origin
from src.seeding import derive_seed

logger = logging.getLogger(__name__)


class Domain(Enum):
    """Available procedural domains."""

    TILECRACK = "tilecrack"
    LUNGSPOT = "lungspot"


class Stream(IntEnum):
    """Seed stream identifiers; each sample kind draws from its own stream."""

    NEGATIVE = 0
    POSITIVE = 1
    LORA = 2
    PRETRAIN_NEGATIVE = 3
    PRETRAIN_POSITIVE = 4


class LoraSource(Enum):
    """Where the LoRA fine-tuning positives come from."""

    DEDICATED = "dedicated"
    TRAIN = "train"


@dataclass(frozen=True)
class DomainParams:
    """Rendering parameters; label noise is always zero.

    Constraints:
    - image_size >= 8
    - noise_scale, smoothing >= 0
    - 0 <= background <= 1
    - crack_count, crack_width, crack_segments >= 1
    - 0 < blob_radius_min <= blob_radius_max
    """

    image_size: int = 32
    noise_scale: float = 0.08
    smoothing: float = 1.5
    background: float = 0.55
    crack_count: int = 2
    crack_width: int = 1
    crack_depth: float = 0.6
    crack_segments: int = 5
    crack_jitter: float = 3.0
    field_contrast: float = 0.1
    blob_radius_min: float = 3.0
    blob_radius_max: float = 5.0
    blob_intensity: float = 0.5

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        if self.image_size < 8:
            raise InvalidArgumentError("image_size must be >= 8")
        if self.noise_scale < 0 or self.smoothing < 0:
            raise InvalidArgumentError("noise_scale and smoothing must be non-negative")
        if not 0.0 <= self.background <= 1.0:
            raise InvalidArgumentError("background must lie in [0, 1]")
        if min(self.crack_count, self.crack_width, self.crack_segments) < 1:
            raise InvalidArgumentError("crack_count, crack_width and crack_segments must be >= 1")
        if not 0 < self.blob_radius_min <= self.blob_radius_max:
            raise InvalidArgumentError("need 0 < blob_radius_min <= blob_radius_max")
        if 2 * self.blob_radius_max + 2 >= self.image_size:
            raise InvalidArgumentError("blob_radius_max too large for image_size")


def _texture(rng: np.random.Generator, params: DomainParams) -> np.ndarray:
    size = params.image_size
    noise = rng.standard_normal((size, size))
    smooth = gaussian_filter(noise, sigma=params.smoothing, mode="wrap") if params.smoothing else noise
    std = smooth.std()
    if std > 0:
        smooth = smooth / std
    return params.background + params.noise_scale * smooth


def _lung_field(params: DomainParams) -> np.ndarray:
    size = params.image_size
    x = np.linspace(-1.0, 1.0, size)
    profile = params.field_contrast * (np.abs(x) - 0.5)
    return np.broadcast_to(profile[None, :], (size, size))


def _crack_mask(rng: np.random.Generator, params: DomainParams) -> np.ndarray:
    """Polylines spanning the full image from one edge to the opposite edge."""
    size = params.image_size
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    for _ in range(params.crack_count):
        vertical = rng.random() < 0.5
        along = np.linspace(0, size - 1, params.crack_segments + 1)
        start = rng.uniform(size * 0.2, size * 0.8)
        across = start + np.cumsum(rng.uniform(-params.crack_jitter, params.crack_jitter, along.size))
        across = np.clip(across, 0, size - 1)
        points = [
            (float(b), float(a)) if vertical else (float(a), float(b))
            for a, b in zip(along, across)
        ]
        draw.line(points, fill=255, width=params.crack_width)
    return np.asarray(canvas) > 0


def _blob(rng: np.random.Generator, params: DomainParams) -> tuple[np.ndarray, np.ndarray]:
    size = params.image_size
    radius = rng.uniform(params.blob_radius_min, params.blob_radius_max)
    margin = radius + 1
    cy, cx = rng.uniform(margin, size - 1 - margin, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    sigma = radius / 2
    profile = np.exp(-d2 / (2 * sigma ** 2))
    return profile, d2 <= radius ** 2


def render_domain(
    domain: Domain | str,
    params: DomainParams,
    label: Label | int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Render one image and the mask of its rare structure.

    Args:
        domain: Domain name
        params: Rendering parameters
        label: Negative renders texture only; positive adds the structure
        seed: Image seed

    Returns:
        Tuple of (float32 image H x W in [0, 1], bool structure mask H x W;
        all False for negatives)
    """
    domain = parse_domain(domain)
    rng = np.random.default_rng(seed)
    image = _texture(rng, params)
    if domain is Domain.LUNGSPOT:
        image = image + _lung_field(params)
    mask = np.zeros(image.shape, dtype=bool)

    if Label(label) is Label.POSITIVE:
        if domain is Domain.TILECRACK:
            mask = _crack_mask(rng, params)
            image = image - params.crack_depth * mask
        else:
            profile, mask = _blob(rng, params)
            image = image + params.blob_intensity * profile

    return np.clip(image, 0.0, 1.0).astype(np.float32), mask


def parse_domain(domain: Domain | str) -> Domain:
    """Convert a domain name to Domain, raising InvalidArgumentError when unknown."""
    try:
        return Domain(domain)
    except ValueError:
        raise InvalidArgumentError(
            f"unknown domain {domain!r}; expected one of {[d.value for d in Domain]}"
        )


def gen_domain(
    domain: Domain | str,
    params: DomainParams,
    label: Label | int,
    seed: int,
    sample_id: str | None = None,
) -> LabeledSample:
    """
    Generate one real-origin sample, deterministic given the seed.

    Args:
        domain: Domain name
        params: Rendering parameters
        label: Class label
        seed: Image seed
        sample_id: Optional id (defaults to ``<domain>-<label>-<seed>``)

    Returns:
        LabeledSample with a (1, H, W) image
    """
    domain = parse_domain(domain)
    label = Label(label)
    image, _ = render_domain(domain, params, label, seed)
    return LabeledSample(
        image=torch.from_numpy(image)[None],
        label=label,
        origin=Origin.REAL,
        id=sample_id or f"{domain.value}-{label.name.lower()}-{seed}",
    )


def _generate(
    domain: Domain,
    params: DomainParams,
    label: Label,
    count: int,
    seed: int,
    stream: Stream,
    prefix: str,
) -> list[LabeledSample]:
    return [
        gen_domain(domain, params, label, derive_seed(seed, stream, i), f"{domain.value}-{prefix}-{i:05d}")
        for i in range(count)
    ]


def make_imbalanced_split(
    domain: Domain | str,
    params: DomainParams,
    n_neg: int = 1000,
    n_pos_train: int = 50,
    n_pos_lora: int = 50,
    test_fraction: float = 0.2,
    seed: int = 0,
    lora_source: LoraSource | str = LoraSource.DEDICATED,
) -> tuple[Dataset, Dataset, Dataset]:
    """
    Generate an imbalanced real dataset and split it.

    The test split takes floor(test_fraction * n) samples of each class
    under a seeded permutation. The LoRA set is either n_pos_lora extra
    positives (``dedicated``) or the first n_pos_lora training positives
    (``train``); either way it is disjoint from the test split.

    Args:
        domain: Domain name
        params: Rendering parameters
        n_neg: Number of real negatives
        n_pos_train: Number of real positives in the classification population
        n_pos_lora: Number of LoRA fine-tuning positives
        test_fraction: Fraction of each class held out, in (0, 1)
        seed: Split seed
        lora_source: ``dedicated`` or ``train``

    Returns:
        Tuple of (train, lora_set, test) datasets, all origin=real

    Raises:
        InvalidArgumentError: On invalid counts or when more LoRA positives
            are requested than the training split holds
    """
    domain = parse_domain(domain)
    try:
        lora_source = LoraSource(lora_source)
    except ValueError:
        raise InvalidArgumentError(f"unknown lora_source {lora_source!r}")
    if not 0.0 < test_fraction < 1.0:
        raise InvalidArgumentError("test_fraction must lie in (0, 1)")
    if n_neg < 1 or n_pos_train < 1 or n_pos_lora < 1:
        raise InvalidArgumentError("n_neg, n_pos_train and n_pos_lora must be >= 1")

    negatives = _generate(domain, params, Label.NEGATIVE, n_neg, seed, Stream.NEGATIVE, "neg")
    positives = _generate(domain, params, Label.POSITIVE, n_pos_train, seed, Stream.POSITIVE, "pos")

    rng = np.random.default_rng(derive_seed(seed, 99))
    neg_test = set(rng.permutation(n_neg)[: math.floor(test_fraction * n_neg)].tolist())
    pos_test = set(rng.permutation(n_pos_train)[: math.floor(test_fraction * n_pos_train)].tolist())

    train_samples = [s for i, s in enumerate(negatives) if i not in neg_test]
    train_samples += [s for i, s in enumerate(positives) if i not in pos_test]
    test_samples = [s for i, s in enumerate(negatives) if i in neg_test]
    test_samples += [s for i, s in enumerate(positives) if i in pos_test]

    if lora_source is LoraSource.DEDICATED:
        lora_samples = _generate(domain, params, Label.POSITIVE, n_pos_lora, seed, Stream.LORA, "lora")
    else:
        train_pos = [s for s in train_samples if s.label is Label.POSITIVE]
        if n_pos_lora > len(train_pos):
            raise InvalidArgumentError(
                f"requested {n_pos_lora} LoRA positives but the training split holds {len(train_pos)}"
            )
        lora_samples = train_pos[:n_pos_lora]
        logger.warning(
            "LoRA set drawn from training positives; they can land in cross-validation test folds"
        )

    note = f"{domain.value} seed={seed} n_neg={n_neg} n_pos={n_pos_train} test_fraction={test_fraction:g}"
    train = Dataset(tuple(train_samples), domain.value, f"train split: {note}")
    lora_set = Dataset(tuple(lora_samples), domain.value, f"lora set ({lora_source.value}): {note}")
    test = Dataset(tuple(test_samples), domain.value, f"test split: {note}")
    logger.info(
        "split %s: train %d (%d pos), lora %d, test %d (%d pos)",
        domain.value, len(train), train.count(label=Label.POSITIVE), len(lora_set),
        len(test), test.count(label=Label.POSITIVE),
    )
    return train, lora_set, test


def pretrain_corpus(
    domain: Domain | str,
    params: DomainParams,
    n_images: int,
    positive_fraction: float,
    seed: int,
) -> Dataset:
    """
    Generate the base model's pretraining images from separate seed streams.

    Args:
        domain: Domain name
        params: Rendering parameters
        n_images: Total number of images (>= 2)
        positive_fraction: Share of positives, in (0, 1)
        seed: Corpus seed

    Returns:
        Dataset containing both classes
    """
    domain = parse_domain(domain)
    n_pos = min(n_images - 1, max(1, round(n_images * positive_fraction)))
    samples = _generate(domain, params, Label.NEGATIVE, n_images - n_pos, seed,
                        Stream.PRETRAIN_NEGATIVE, "pre-neg")
    samples += _generate(domain, params, Label.POSITIVE, n_pos, seed,
                         Stream.PRETRAIN_POSITIVE, "pre-pos")
    return Dataset(tuple(samples), domain.value, f"pretraining corpus seed={seed} n={n_images}")
