"""Noise schedule and closed-form forward diffusion.

Schedules are kept in float64 so that ``alpha_bar`` matches the running
product of ``alpha`` to well below 1e-12 relative error.

Model-space convention: data images live in [0, 1] and are mapped to the
model space [-1, 1] with ``x -> 2x - 1`` (see ``to_model_space``).
"""
import math
from dataclasses import dataclass
from enum import Enum

import torch

from src.errors import InvalidArgumentError

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 2e-2
COSINE_OFFSET = 0.008
COSINE_BETA_MAX = 0.999


class ScheduleKind(Enum):
    """Available beta schedules."""

    LINEAR = "linear"
    COSINE = "cosine"


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta, alpha and cumulative alpha tables (float64)."""

    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor

    @property
    def T(self) -> int:
        """Number of diffusion timesteps."""
        return int(self.beta.shape[0])


def _linear_betas(T: int) -> torch.Tensor:
    return torch.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T, dtype=torch.float64)


def _cosine_betas(T: int) -> torch.Tensor:
    x = torch.linspace(0, T, T + 1, dtype=torch.float64)
    f = torch.cos(((x / T) + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi * 0.5) ** 2
    alpha_bar = f / f[0]
    betas = 1 - (alpha_bar[1:] / alpha_bar[:-1])
    return torch.clamp(betas, LINEAR_BETA_START, COSINE_BETA_MAX)


def build_noise_schedule(T: int, kind: ScheduleKind | str = ScheduleKind.LINEAR) -> NoiseSchedule:
    """
    Build a noise schedule.

    The linear kind interpolates beta from 1e-4 to 2e-2; the cosine kind
    derives beta from a squared-cosine alpha_bar curve, clipped to
    [1e-4, 0.999].

    Args:
        T: Number of timesteps (>= 2)
        kind: Schedule kind

    Returns:
        NoiseSchedule satisfying 0 < beta < 1 and strictly decreasing alpha_bar

    Raises:
        InvalidArgumentError: If T < 2 or the kind is unknown
    """
    if T < 2:
        raise InvalidArgumentError(f"schedule needs T >= 2, got T={T}")
    try:
        kind = ScheduleKind(kind)
    except ValueError:
        raise InvalidArgumentError(f"unknown schedule kind: {kind!r}")

    beta = _linear_betas(T) if kind is ScheduleKind.LINEAR else _cosine_betas(T)
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def to_model_space(x: torch.Tensor) -> torch.Tensor:
    """Map data-space values in [0, 1] to model space [-1, 1]."""
    return x * 2.0 - 1.0


def to_data_space(x: torch.Tensor) -> torch.Tensor:
    """Map model-space values back to [0, 1], clamping the result."""
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)


def _gather(table: torch.Tensor, t: torch.Tensor | int, like: torch.Tensor) -> torch.Tensor:
    """Index a schedule table at t and broadcast it against a batch."""
    if isinstance(t, int):
        return table[t].to(like.dtype)
    values = table[t.long().cpu()].to(like.dtype)
    return values.view(-1, *([1] * (like.dim() - 1)))


def forward_diffuse(
    x0: torch.Tensor,
    t: torch.Tensor | int,
    eps: torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """
    Sample x_t from q(x_t | x_0) in closed form.

    Formula:
        x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps

    Args:
        x0: Clean images in model space; a single image or a batch
        t: Timestep (int) or per-sample timesteps (1-D tensor)
        eps: Noise with the same shape as x0
        sched: Noise schedule

    Returns:
        Noised images, same shape and dtype as x0

    Raises:
        InvalidArgumentError: On shape mismatch or out-of-range timestep
    """
    if eps.shape != x0.shape:
        raise InvalidArgumentError(
            f"noise shape {tuple(eps.shape)} does not match image shape {tuple(x0.shape)}"
        )
    t_min, t_max = (t, t) if isinstance(t, int) else (int(t.min()), int(t.max()))
    if t_min < 0 or t_max >= sched.T:
        raise InvalidArgumentError(f"timestep out of range [0, {sched.T})")

    sqrt_ab = _gather(sched.alpha_bar.sqrt(), t, x0)
    sqrt_one_minus_ab = _gather((1.0 - sched.alpha_bar).sqrt(), t, x0)
    return sqrt_ab * x0 + sqrt_one_minus_ab * eps
