"""Diffusion training objective, base-model pretraining and guided sampling."""
import logging
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from src.errors import InvalidArgumentError
from src.noise_schedule import NoiseSchedule, forward_diffuse, to_data_space, to_model_space
from src.samples import ClassToken, Dataset, Label, LabeledSample, Origin
from src.unet import DiffusionModel, UNetConfig, build_diffusion_model

logger = logging.getLogger(__name__)

DEFAULT_P_UNCOND = 0.1


@dataclass(frozen=True)
class PretrainConfig:
    """Hyperparameters for base-model pretraining."""

    steps: int = 3000
    batch_size: int = 64
    learning_rate: float = 2e-4
    p_uncond: float = DEFAULT_P_UNCOND
    n_images: int = 2000
    positive_fraction: float = 0.5
    log_every: int = 100

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        if self.steps < 0:
            raise InvalidArgumentError("steps must be non-negative")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be positive")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise InvalidArgumentError("p_uncond must lie in [0, 1]")
        if self.n_images < 2:
            raise InvalidArgumentError("n_images must be >= 2")
        if not 0.0 < self.positive_fraction < 1.0:
            raise InvalidArgumentError("positive_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class SamplerConfig:
    """Accelerated sampler settings.

    Constraints:
    - steps >= 1 (and <= T, checked against the schedule at sampling time)
    - guidance_scale >= 0
    - 0 <= eta <= 1
    """

    steps: int = 24
    guidance_scale: float = 2.0
    eta: float = 0.0
    seed: int = 0
    batch_size: int = 64
    clip_denoised: bool = True

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        if self.steps < 1:
            raise InvalidArgumentError("sampler steps must be >= 1")
        if self.guidance_scale < 0:
            raise InvalidArgumentError("guidance_scale must be non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise InvalidArgumentError("eta must lie in [0, 1]")
        if self.batch_size < 1:
            raise InvalidArgumentError("sampler batch_size must be positive")


@dataclass(frozen=True)
class LossRecord:
    """One point of a training curve."""

    step: int
    loss: float


@dataclass(frozen=True)
class GuidanceTrace:
    """Noise predictions seen at one sampler step.

    ``eps_cond`` is None when guidance_scale == 0 and ``eps_uncond`` is None
    when guidance_scale == 1; the skipped branch does not influence the result.
    """

    t: int
    t_prev: int
    eps_cond: torch.Tensor | None
    eps_uncond: torch.Tensor | None
    eps_hat: torch.Tensor


def trainable_parameters(model: nn.Module) -> list[tuple[str, nn.Parameter]]:
    """Named parameters with requires_grad set, in registration order."""
    return [(name, p) for name, p in model.named_parameters() if p.requires_grad]


def diffusion_loss(
    model: nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    sched: NoiseSchedule,
    generator: torch.Generator,
    p_uncond: float = DEFAULT_P_UNCOND,
    *,
    t: torch.Tensor | None = None,
    eps: torch.Tensor | None = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """
    Epsilon-prediction mean-squared error and its gradients.

    Draw order from the generator is fixed: timesteps, noise, then the
    label-dropout mask. Dropped labels become ClassToken.UNCONDITIONAL.

    Args:
        model: Noise predictor; gradients cover its trainable parameters
        images: Clean batch (B, 1, H, W) in data space [0, 1]
        labels: Class tokens (B,)
        sched: Noise schedule
        generator: Seeded stream for all random draws
        p_uncond: Probability of replacing a label with the unconditional token
        t: Optional fixed timesteps (B,) instead of uniform draws
        eps: Optional fixed noise instead of Gaussian draws

    Returns:
        Tuple of (scalar loss tensor, gradient per trainable parameter name)

    Raises:
        InvalidArgumentError: If the batch is empty
    """
    batch = images.shape[0]
    if batch == 0:
        raise InvalidArgumentError("diffusion_loss needs a non-empty batch")

    x0 = to_model_space(images)
    if t is None:
        t = torch.randint(0, sched.T, (batch,), generator=generator)
    if eps is None:
        eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    drop = torch.rand(batch, generator=generator) < p_uncond
    tokens = torch.where(drop, torch.full_like(labels, int(ClassToken.UNCONDITIONAL)), labels)

    x_t = forward_diffuse(x0, t, eps, sched)
    loss = F.mse_loss(model(x_t, t, tokens), eps)

    named = trainable_parameters(model)
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    gradients = {
        name: torch.zeros_like(p) if g is None else g
        for (name, p), g in zip(named, grads)
    }
    return loss.detach(), gradients


def apply_gradients(model: nn.Module, gradients: dict[str, torch.Tensor]) -> None:
    """Store precomputed gradients on the model's trainable parameters."""
    for name, p in trainable_parameters(model):
        p.grad = gradients[name]


def pretrain_diffusion(
    dataset: Dataset,
    cfg: PretrainConfig,
    arch: UNetConfig,
    sched: NoiseSchedule,
    seed: int,
    progress: bool = False,
) -> tuple[DiffusionModel, list[LossRecord]]:
    """
    Train the base noise predictor on both classes.

    Args:
        dataset: Training images of both classes
        cfg: Pretraining hyperparameters
        arch: Architecture descriptor
        sched: Noise schedule
        seed: Seed for initialisation and every random draw
        progress: Show a progress bar

    Returns:
        Tuple of (trained model, per-step loss log)

    Raises:
        InvalidArgumentError: If a class is missing from the dataset
    """
    for label in Label:
        if dataset.count(label=label) == 0:
            raise InvalidArgumentError(
                f"pretraining data has no {label.name.lower()} samples; the base model needs both classes"
            )
    if dataset.image_shape[1:] != (arch.image_size, arch.image_size):
        raise InvalidArgumentError(
            f"dataset images {dataset.image_shape} do not match image_size {arch.image_size}"
        )

    model = build_diffusion_model(arch, seed)
    images = dataset.images()
    labels = dataset.labels()
    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    log: list[LossRecord] = []

    model.train()
    for step in tqdm(range(cfg.steps), desc="pretrain", disable=not progress):
        idx = torch.randint(0, len(dataset), (cfg.batch_size,), generator=generator)
        loss, grads = diffusion_loss(model, images[idx], labels[idx], sched, generator, cfg.p_uncond)
        optimizer.zero_grad(set_to_none=True)
        apply_gradients(model, grads)
        optimizer.step()
        log.append(LossRecord(step=step, loss=float(loss)))
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("pretrain step %d loss %.5f", step, float(loss))

    model.eval()
    logger.info(
        "pretrained %d-parameter model for %d steps", model.parameter_count(), cfg.steps
    )
    return model, log


def sampling_timesteps(T: int, steps: int) -> list[int]:
    """
    Evenly spaced descending timestep subsequence from T-1 down to 0.

    Args:
        T: Schedule length
        steps: Number of sampler steps (1 <= steps <= T)

    Returns:
        Strictly decreasing list of timesteps
    """
    if not 1 <= steps <= T:
        raise InvalidArgumentError(f"sampler steps must lie in [1, {T}], got {steps}")
    return [int(v) for v in torch.linspace(T - 1, 0, steps, dtype=torch.float64).round().long()]


def _token(label: ClassToken | int) -> ClassToken:
    try:
        return ClassToken(int(label))
    except ValueError:
        raise InvalidArgumentError(f"unknown class token: {label!r}")


@torch.no_grad()
def sample_batch(
    model: nn.Module,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    label: ClassToken | int,
    seeds: list[int],
    on_step: Callable[[GuidanceTrace], None] | None = None,
) -> torch.Tensor:
    """
    Guided accelerated sampling of one image per seed.

    Each image draws its initial noise (and eta noise) from its own
    generator, so an image depends only on its own seed: it matches a
    single-image call with that seed regardless of batch size or position.

    Args:
        model: Noise predictor (plain or adapted)
        sched: Noise schedule
        cfg: Sampler settings; cfg.seed is ignored in favour of ``seeds``
        label: Class token to condition on
        seeds: One seed per image
        on_step: Optional callback receiving a GuidanceTrace per step

    Returns:
        Images (N, 1, H, W) in data space [0, 1]
    """
    token = _token(label)
    timesteps = sampling_timesteps(sched.T, cfg.steps)
    size = model.config.image_size
    generators = [torch.Generator().manual_seed(s) for s in seeds]
    x = torch.cat([torch.randn((1, 1, size, size), generator=g) for g in generators])
    n = x.shape[0]
    cond = torch.full((n,), int(token), dtype=torch.int64)
    uncond = torch.full((n,), int(ClassToken.UNCONDITIONAL), dtype=torch.int64)
    s = cfg.guidance_scale

    was_training = model.training
    model.eval()
    for i, t in enumerate(timesteps):
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else -1
        t_batch = torch.full((n,), t, dtype=torch.int64)
        eps_c = eps_u = None
        if s == 1.0:
            eps_c = model(x, t_batch, cond)
            eps_hat = eps_c
        elif s == 0.0:
            eps_u = model(x, t_batch, uncond)
            eps_hat = eps_u
        else:
            both = model(torch.cat([x, x]), torch.cat([t_batch, t_batch]), torch.cat([cond, uncond]))
            eps_c, eps_u = both.chunk(2)
            eps_hat = eps_u + s * (eps_c - eps_u)
        if on_step is not None:
            on_step(GuidanceTrace(t=t, t_prev=t_prev, eps_cond=eps_c, eps_uncond=eps_u, eps_hat=eps_hat))

        ab = sched.alpha_bar[t]
        ab_prev = sched.alpha_bar[t_prev] if t_prev >= 0 else torch.tensor(1.0, dtype=torch.float64)
        x0_pred = (x - (1 - ab).sqrt().float() * eps_hat) / ab.sqrt().float()
        if cfg.clip_denoised:
            x0_pred = x0_pred.clamp(-1.0, 1.0)
        sigma = cfg.eta * ((1 - ab_prev) / (1 - ab) * (1 - ab / ab_prev)).sqrt()
        direction = (1 - ab_prev - sigma ** 2).clamp(min=0.0).sqrt()
        x = ab_prev.sqrt().float() * x0_pred + direction.float() * eps_hat
        if cfg.eta > 0 and t_prev >= 0:
            z = torch.cat([torch.randn((1, 1, size, size), generator=g) for g in generators])
            x = x + sigma.float() * z

    model.train(was_training)
    return to_data_space(x)


def sample_cfg(
    model: nn.Module,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    label: ClassToken | int,
    on_step: Callable[[GuidanceTrace], None] | None = None,
) -> torch.Tensor:
    """
    Sample one image with classifier-free guidance.

    At each step eps_hat = eps_u + s * (eps_c - eps_u); s = 1 uses eps_c
    alone and s = 0 uses eps_u alone.

    Args:
        model: Noise predictor (plain or adapted)
        sched: Noise schedule
        cfg: Sampler settings (cfg.seed selects the image)
        label: Class token to condition on
        on_step: Optional instrumentation callback

    Returns:
        Image (1, H, W) in data space [0, 1]

    Raises:
        InvalidArgumentError: On unknown label or too many steps
    """
    return sample_batch(model, sched, cfg, label, [cfg.seed], on_step)[0]


def generate_pool(
    model: nn.Module,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    n: int,
    seed0: int,
    label: ClassToken | int = ClassToken.POSITIVE,
    domain: str = "",
    id_prefix: str = "synth",
    progress: bool = False,
) -> Dataset:
    """
    Generate n synthetic positives; sample i uses seed seed0 + i.

    Every generated sample is kept.

    Args:
        model: Fine-tuned noise predictor
        sched: Noise schedule
        cfg: Sampler settings (batch_size sets the chunk size)
        n: Pool size (>= 1)
        seed0: Seed of the first sample
        label: Class token; synthetic samples are always the positive class
        domain: Domain tag of the returned dataset
        id_prefix: Prefix of generated sample ids
        progress: Show a progress bar

    Returns:
        Dataset of n positive, synthetic samples
    """
    if n < 1:
        raise InvalidArgumentError(f"pool size must be >= 1, got {n}")
    if _token(label) is not ClassToken.POSITIVE:
        raise InvalidArgumentError("only the positive (rare) class is synthesized")

    samples: list[LabeledSample] = []
    chunks = range(0, n, cfg.batch_size)
    for start in tqdm(chunks, desc="generate", disable=not progress):
        seeds = [seed0 + i for i in range(start, min(n, start + cfg.batch_size))]
        images = sample_batch(model, sched, cfg, ClassToken.POSITIVE, seeds)
        for i, img in zip(range(start, start + len(seeds)), images):
            samples.append(LabeledSample(
                image=img,
                label=Label.POSITIVE,
                origin=Origin.SYNTHETIC,
                id=f"{id_prefix}-{i:05d}",
            ))
    logger.info("generated %d synthetic positives (seed0=%d)", n, seed0)
    return Dataset(
        samples=tuple(samples),
        domain=domain,
        provenance=f"synthetic pool: n={n} seed0={seed0} steps={cfg.steps} s={cfg.guidance_scale:g}",
    )
