"""Downstream rare-class classifier trained with a class-weighted logistic loss."""
import logging
import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from src.diffusion import apply_gradients, trainable_parameters
from src.errors import InvalidArgumentError, UntrainedModelError
from src.samples import Dataset, Label

logger = logging.getLogger(__name__)

AUTO = "auto"
LOGIT_CAP = 30.0


@dataclass(frozen=True)
class ClassifierConfig:
    """Architecture of the residual CNN: one residual block per stage."""

    image_size: int = 32
    widths: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or any(w <= 0 for w in self.widths):
            raise InvalidArgumentError("classifier widths must be positive")
        if self.image_size < 2 ** (len(self.widths) - 1):
            raise InvalidArgumentError("image_size too small for the number of stages")

    def to_dict(self) -> dict:
        """Return a JSON-serializable descriptor."""
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass(frozen=True)
class TrainConfig:
    """Classifier training hyperparameters.

    pos_weight is either a positive number or ``"auto"`` (N_neg / N_pos of
    the training set).
    """

    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    pos_weight: float | str = AUTO
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be non-negative")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise InvalidArgumentError("weight_decay must be non-negative")
        if isinstance(self.pos_weight, str):
            if self.pos_weight != AUTO:
                raise InvalidArgumentError(f"pos_weight must be a number or 'auto', got {self.pos_weight!r}")
        elif not (self.pos_weight > 0 and math.isfinite(self.pos_weight)):
            raise InvalidArgumentError("explicit pos_weight must be positive and finite")


@dataclass(frozen=True)
class EpochRecord:
    """Mean training loss of one epoch."""

    epoch: int
    loss: float


class BasicBlock(nn.Module):
    """Two 3x3 convolutions with batch norm and an identity or projected shortcut."""

    def __init__(self, in_ch: int, out_ch: int, stride: int) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.shortcut(x))


class ClassifierModel(nn.Module):
    """Residual CNN with global average pooling and a single logit.

    ``fitted`` is set by train_classifier (or a checkpoint load) and gates
    use of the embedding as a perceptual space.
    """

    def __init__(self, config: ClassifierConfig) -> None:
        super().__init__()
        self.config = config
        first = config.widths[0]
        self.stem = nn.Sequential(
            nn.Conv2d(1, first, 3, padding=1, bias=False),
            nn.BatchNorm2d(first),
            nn.ReLU(),
        )
        blocks = []
        prev = first
        for i, w in enumerate(config.widths):
            blocks.append(BasicBlock(prev, w, stride=1 if i == 0 else 2))
            prev = w
        self.stages = nn.Sequential(*blocks)
        self.head = nn.Linear(prev, 1)
        self.fitted = False

    @property
    def embedding_dim(self) -> int:
        """Dimension of the pooled penultimate vector."""
        return self.config.widths[-1]

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate pooled features, shape (N, embedding_dim)."""
        h = self.stages(self.stem(x))
        return F.adaptive_avg_pool2d(h, 1).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(x)).squeeze(1)

    def parameter_count(self) -> int:
        """Total number of parameters."""
        return sum(p.numel() for p in self.parameters())


def build_classifier(config: ClassifierConfig, seed: int) -> ClassifierModel:
    """Build a freshly initialised classifier, deterministic given the seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ClassifierModel(config)


def compute_pos_weight(train: Dataset) -> float:
    """
    Inverse class ratio N_neg / N_pos of a training set.

    Synthetic positives count as positives.

    Raises:
        InvalidArgumentError: If either class is absent
    """
    n_pos = train.count(label=Label.POSITIVE)
    n_neg = train.count(label=Label.NEGATIVE)
    if n_pos == 0 or n_neg == 0:
        raise InvalidArgumentError(
            f"pos_weight needs both classes (negatives={n_neg}, positives={n_pos})"
        )
    return n_neg / n_pos


def weighted_bce_loss(
    logits: torch.Tensor,
    labels: torch.Tensor,
    pos_weight: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Class-weighted logistic loss and its exact gradient with respect to the logits.

    loss = mean_i [ -w y_i log sigmoid(z_i) - (1 - y_i) log(1 - sigmoid(z_i)) ]
    dloss/dz_i = ((1 + (w - 1) y_i) sigmoid(z_i) - w y_i) / n

    Args:
        logits: Raw scores (n,)
        labels: Binary targets (n,)
        pos_weight: Weight w of the positive term

    Returns:
        Tuple of (scalar loss, gradient tensor shaped like logits)

    Raises:
        InvalidArgumentError: On length mismatch, empty input or non-finite logits
    """
    if logits.shape != labels.shape:
        raise InvalidArgumentError(
            f"logits shape {tuple(logits.shape)} != labels shape {tuple(labels.shape)}"
        )
    if logits.numel() == 0:
        raise InvalidArgumentError("weighted_bce_loss needs at least one sample")
    if not torch.isfinite(logits).all():
        raise InvalidArgumentError("logits must be finite")

    z = logits.detach()
    y = labels.to(z.dtype)
    w = torch.tensor(pos_weight, dtype=z.dtype)
    loss = F.binary_cross_entropy_with_logits(z, y, pos_weight=w)
    grad = ((1 + (w - 1) * y) * torch.sigmoid(z) - w * y) / z.numel()
    return loss, grad


def classifier_gradients(
    model: ClassifierModel,
    images: torch.Tensor,
    labels: torch.Tensor,
    pos_weight: float,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """
    Loss and parameter gradients, chained through the analytic logit gradient.

    Returns:
        Tuple of (scalar loss, gradient per trainable parameter name)
    """
    logits = model(images)
    loss, dlogits = weighted_bce_loss(logits, labels, pos_weight)
    named = trainable_parameters(model)
    grads = torch.autograd.grad(logits, [p for _, p in named], grad_outputs=dlogits, allow_unused=True)
    return loss, {
        name: torch.zeros_like(p) if g is None else g
        for (name, p), g in zip(named, grads)
    }


def resolve_pos_weight(train: Dataset, cfg: TrainConfig) -> float:
    """The configured pos_weight, computing it from the data when ``auto``."""
    if cfg.pos_weight == AUTO:
        return compute_pos_weight(train)
    return float(cfg.pos_weight)


def train_classifier(
    train: Dataset,
    cfg: TrainConfig,
    arch: ClassifierConfig | None = None,
    progress: bool = False,
) -> tuple[ClassifierModel, list[EpochRecord]]:
    """
    Train the classifier for a fixed number of epochs.

    Args:
        train: Training samples of both classes
        cfg: Training hyperparameters (cfg.seed fixes init and shuffling)
        arch: Architecture (defaults to ClassifierConfig at the data's image size)
        progress: Show a progress bar

    Returns:
        Tuple of (trained model in eval mode, per-epoch mean loss log)

    Raises:
        InvalidArgumentError: If a class is missing
    """
    compute_pos_weight(train)
    pos_weight = resolve_pos_weight(train, cfg)
    size = train.image_shape[-1]
    arch = arch or ClassifierConfig(image_size=size)
    if train.image_shape[1:] != (arch.image_size, arch.image_size):
        raise InvalidArgumentError(
            f"training images {train.image_shape} do not match image_size {arch.image_size}"
        )

    model = build_classifier(arch, cfg.seed)
    images = train.images()
    labels = train.labels().to(images.dtype)
    n = len(train)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    generator = torch.Generator().manual_seed(cfg.seed)
    log: list[EpochRecord] = []

    model.train()
    for epoch in tqdm(range(cfg.epochs), desc="classifier", disable=not progress):
        order = torch.randperm(n, generator=generator)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = classifier_gradients(model, images[idx], labels[idx], pos_weight)
            optimizer.zero_grad(set_to_none=True)
            apply_gradients(model, grads)
            optimizer.step()
            total += float(loss) * len(idx)
        log.append(EpochRecord(epoch=epoch, loss=total / n))
        logger.debug("classifier epoch %d loss %.5f", epoch, total / n)

    model.eval()
    model.fitted = True
    logger.info(
        "trained classifier on %d samples (pos_weight %.3f, %d epochs)", n, pos_weight, cfg.epochs
    )
    return model, log


def _check_images(model: ClassifierModel, images: torch.Tensor) -> None:
    size = model.config.image_size
    if images.dim() != 4 or tuple(images.shape[1:]) != (1, size, size):
        raise InvalidArgumentError(
            f"expected images of shape (N, 1, {size}, {size}), got {tuple(images.shape)}"
        )


@torch.no_grad()
def predict_scores(model: ClassifierModel, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    """
    Positive-class probabilities sigmoid(logit), in input order.

    Logits are capped at +-30 before the sigmoid, keeping every score
    strictly inside (0, 1); the map is strictly increasing within the cap.

    Args:
        model: Classifier
        images: (N, 1, H, W) batch matching the trained image size
        batch_size: Evaluation chunk size

    Returns:
        float64 tensor (N,)
    """
    _check_images(model, images)
    was_training = model.training
    model.eval()
    chunks = [model(images[i:i + batch_size]) for i in range(0, images.shape[0], batch_size)]
    model.train(was_training)
    logits = torch.cat(chunks) if chunks else torch.empty(0)
    return torch.sigmoid(logits.double().clamp(-LOGIT_CAP, LOGIT_CAP))


@torch.no_grad()
def embed_images(model: ClassifierModel, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    """
    Penultimate embeddings of a trained classifier.

    Raises:
        UntrainedModelError: If the model was never trained or loaded as trained
    """
    if not model.fitted:
        raise UntrainedModelError("perceptual embedding requires a trained classifier")
    _check_images(model, images)
    was_training = model.training
    model.eval()
    chunks = [model.embed(images[i:i + batch_size]) for i in range(0, images.shape[0], batch_size)]
    model.train(was_training)
    return torch.cat(chunks)
