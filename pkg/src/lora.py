"""Low-rank adaptation of a frozen noise predictor.

Each targeted weight W (d_out x d_in) gains a factor pair A (r x d_in),
B (d_out x r) and computes W x + (alpha / r) * B (A dropout(x)). A k x k
convolution kernel is adapted as a d_out x (d_in * k * k) matrix.
"""
import copy
import logging
import math
from dataclasses import dataclass
from fnmatch import fnmatch

import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from src.diffusion import LossRecord, apply_gradients, diffusion_loss
from src.errors import InvalidArgumentError
from src.noise_schedule import NoiseSchedule
from src.samples import ClassToken, Dataset, Label, Origin
from src.unet import DiffusionModel, UNetConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoRAConfig:
    """Adapter hyperparameters.

    ``targets`` are glob patterns over qualified module names; every
    nn.Linear and nn.Conv2d whose name matches one pattern is adapted.
    """

    rank: int = 8
    alpha: float = 8.0
    dropout: float = 0.08
    targets: tuple[str, ...] = ("*",)
    steps: int = 200
    learning_rate: float = 5e-3
    batch_size: int = 8
    log_every: int = 20

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.rank < 1:
            raise InvalidArgumentError("LoRA rank must be >= 1")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidArgumentError("LoRA alpha must be positive and finite")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgumentError("LoRA dropout must lie in [0, 1)")
        if self.steps < 0:
            raise InvalidArgumentError("LoRA steps must be non-negative")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("LoRA learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidArgumentError("LoRA batch_size must be positive")

    @property
    def scale(self) -> float:
        """Adapter scale alpha / r."""
        return self.alpha / self.rank


class LoRALayer(nn.Module):
    """Frozen base layer plus a trainable low-rank update."""

    def __init__(
        self,
        base: nn.Linear | nn.Conv2d,
        rank: int,
        scale: float,
        dropout: float,
        generator: torch.Generator,
    ) -> None:
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        weight = base.weight
        d_out = weight.shape[0]
        d_in = weight[0].numel()
        bound = 1.0 / math.sqrt(d_in)
        a = (torch.rand((rank, d_in), generator=generator, dtype=torch.float64) * 2 - 1) * bound
        self.lora_A = nn.Parameter(a.to(weight.dtype))
        self.lora_B = nn.Parameter(torch.zeros((d_out, rank), dtype=weight.dtype))
        self.scale = scale
        self.dropout = nn.Dropout(dropout)

    @property
    def rank(self) -> int:
        """Adapter rank r."""
        return self.lora_A.shape[0]

    def delta_weight(self) -> torch.Tensor:
        """(alpha / r) * B A reshaped to the base weight's shape."""
        return (self.scale * (self.lora_B @ self.lora_A)).view_as(self.base.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        base = self.base
        h = self.dropout(x)
        if isinstance(base, nn.Conv2d):
            a = self.lora_A.view(self.rank, *base.weight.shape[1:])
            h = F.conv2d(h, a, None, base.stride, base.padding, base.dilation)
            h = F.conv2d(h, self.lora_B[:, :, None, None])
        else:
            h = F.linear(F.linear(h, self.lora_A), self.lora_B)
        return base(x) + self.scale * h

    def merged(self) -> nn.Linear | nn.Conv2d:
        """Copy of the base layer with the update folded into its weight."""
        layer = copy.deepcopy(self.base)
        with torch.no_grad():
            layer.weight.add_(self.delta_weight())
        for p in layer.parameters():
            p.requires_grad_(True)
        return layer


def _set_submodule(root: nn.Module, name: str, module: nn.Module) -> None:
    parent_name, _, attr = name.rpartition(".")
    parent = root.get_submodule(parent_name) if parent_name else root
    setattr(parent, attr, module)


def _is_target(module: nn.Module) -> bool:
    if isinstance(module, nn.Conv2d):
        return module.groups == 1
    return isinstance(module, nn.Linear)


class AdaptedModel(nn.Module):
    """A frozen DiffusionModel copy whose target layers carry LoRA factors."""

    def __init__(self, model: DiffusionModel, lora_config: LoRAConfig) -> None:
        super().__init__()
        self.model = model
        self.lora_config = lora_config

    @property
    def config(self) -> UNetConfig:
        """Architecture descriptor of the underlying model."""
        return self.model.config

    def forward(self, x: torch.Tensor, t: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return self.model(x, t, c)

    def adapters(self) -> dict[str, LoRALayer]:
        """Adapted layers by qualified name, in registration order."""
        return {n: m for n, m in self.model.named_modules() if isinstance(m, LoRALayer)}

    def trainable_count(self) -> int:
        """Number of trainable adapter values, sum of r * (d_in + d_out)."""
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def base_state(self) -> dict[str, torch.Tensor]:
        """Base-model parameters under their original (unadapted) names."""
        state = {}
        for name, tensor in self.model.state_dict().items():
            if ".lora_" in name:
                continue
            state[name.replace(".base.", ".")] = tensor
        return state

    def adapter_state(self) -> dict[str, torch.Tensor]:
        """Adapter factors keyed ``<layer>.lora_A`` / ``<layer>.lora_B``."""
        state = {}
        for name, layer in self.adapters().items():
            state[f"{name}.lora_A"] = layer.lora_A.detach().clone()
            state[f"{name}.lora_B"] = layer.lora_B.detach().clone()
        return state

    def load_adapter_state(self, state: dict[str, torch.Tensor]) -> None:
        """
        Load adapter factors saved by ``adapter_state``.

        Raises:
            InvalidArgumentError: If names or shapes do not match
        """
        expected = self.adapter_state()
        if set(state) != set(expected):
            missing = sorted(set(expected) - set(state))
            extra = sorted(set(state) - set(expected))
            raise InvalidArgumentError(f"adapter state mismatch: missing={missing} extra={extra}")
        for name, layer in self.adapters().items():
            for attr in ("lora_A", "lora_B"):
                src = state[f"{name}.{attr}"]
                dst = getattr(layer, attr)
                if src.shape != dst.shape:
                    raise InvalidArgumentError(
                        f"{name}.{attr}: shape {tuple(src.shape)} != {tuple(dst.shape)}"
                    )
                with torch.no_grad():
                    dst.copy_(src)


def attach_lora(
    model: DiffusionModel,
    cfg: LoRAConfig,
    generator: torch.Generator,
) -> AdaptedModel:
    """
    Wrap target layers of a copy of the model with zero-initialised adapters.

    A is drawn from uniform(-1/sqrt(d_in), 1/sqrt(d_in)) and B is zero, so
    the adapted model reproduces the base model exactly until trained. The
    input model is left untouched.

    Args:
        model: Base noise predictor
        cfg: Adapter configuration
        generator: Seeded stream for A initialisation

    Returns:
        AdaptedModel with only A and B trainable

    Raises:
        InvalidArgumentError: If the target selector matches no layer
    """
    inner = copy.deepcopy(model)
    for p in inner.parameters():
        p.requires_grad_(False)

    targets = [
        (name, module) for name, module in inner.named_modules()
        if name and _is_target(module) and any(fnmatch(name, pat) for pat in cfg.targets)
    ]
    if not targets:
        raise InvalidArgumentError(f"LoRA target selector {list(cfg.targets)} matches no layer")

    for name, module in targets:
        _set_submodule(inner, name, LoRALayer(module, cfg.rank, cfg.scale, cfg.dropout, generator))

    adapted = AdaptedModel(inner, cfg)
    adapted.eval()
    logger.info(
        "attached rank-%d adapters to %d layers (%d trainable values)",
        cfg.rank, len(targets), adapted.trainable_count(),
    )
    return adapted


def finetune_lora(
    adapted: AdaptedModel,
    rare: Dataset,
    sched: NoiseSchedule,
    cfg: LoRAConfig,
    seed: int,
    progress: bool = False,
) -> tuple[AdaptedModel, list[LossRecord]]:
    """
    Fine-tune adapter factors on real rare-class images.

    Every image is conditioned on the positive token and no label dropout
    is applied. Training happens on a copy; base weights never change.

    Args:
        adapted: Model returned by attach_lora
        rare: Real positive samples (at least one)
        sched: Noise schedule
        cfg: Adapter configuration (steps, learning rate, batch size)
        seed: Seed for batch draws, noise and dropout
        progress: Show a progress bar

    Returns:
        Tuple of (fine-tuned copy, per-step loss log)

    Raises:
        InvalidArgumentError: If rare is empty or holds negatives or synthetic samples
    """
    if len(rare) == 0:
        raise InvalidArgumentError("LoRA fine-tuning needs at least one rare-class image")
    if rare.count(label=Label.NEGATIVE) > 0:
        raise InvalidArgumentError("LoRA fine-tuning set must contain positives only")
    if rare.count(origin=Origin.SYNTHETIC) > 0:
        raise InvalidArgumentError("LoRA fine-tuning set must contain real samples only")

    tuned = copy.deepcopy(adapted)
    images = rare.images()
    labels = torch.full((len(rare),), int(ClassToken.POSITIVE), dtype=torch.int64)
    params = [p for p in tuned.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    generator = torch.Generator().manual_seed(seed)
    log: list[LossRecord] = []

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        tuned.train()
        for step in tqdm(range(cfg.steps), desc="finetune", disable=not progress):
            idx = torch.randint(0, len(rare), (cfg.batch_size,), generator=generator)
            loss, grads = diffusion_loss(tuned, images[idx], labels[idx], sched, generator, p_uncond=0.0)
            optimizer.zero_grad(set_to_none=True)
            apply_gradients(tuned, grads)
            optimizer.step()
            log.append(LossRecord(step=step, loss=float(loss)))
            if cfg.log_every and step % cfg.log_every == 0:
                logger.info("finetune step %d loss %.5f", step, float(loss))
        tuned.eval()

    return tuned, log


def merge_lora(adapted: AdaptedModel) -> DiffusionModel:
    """
    Fold adapters into plain weights: W' = W + (alpha / r) * B A.

    Args:
        adapted: Adapted model

    Returns:
        Plain DiffusionModel equivalent to inference-mode adapted forward passes

    Raises:
        TypeError: If the model carries no adapters (e.g. it was already merged)
    """
    if not isinstance(adapted, AdaptedModel):
        raise TypeError(f"merge_lora expects an AdaptedModel, got {type(adapted).__name__}")
    merged = copy.deepcopy(adapted.model)
    for name, layer in list(merged.named_modules()):
        if isinstance(layer, LoRALayer):
            _set_submodule(merged, name, layer.merged())
    for p in merged.parameters():
        p.requires_grad_(True)
    merged.eval()
    return merged
