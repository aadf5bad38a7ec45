"""Small class-conditional U-Net noise predictor eps_theta(x_t, t, c)."""
import math
from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from src.errors import InvalidArgumentError
from src.samples import ClassToken

NUM_CLASS_TOKENS = len(ClassToken)
MAX_PERIOD = 10000


@dataclass(frozen=True)
class UNetConfig:
    """Architecture descriptor of the noise predictor.

    Constraints:
    - at least one stage, all widths positive
    - image_size divisible by 2 ** (stages - 1)
    """

    image_size: int = 32
    widths: tuple[int, ...] = (32, 64, 128)
    blocks_per_stage: int = 2
    emb_dim: int = 128

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or any(w <= 0 for w in self.widths):
            raise InvalidArgumentError("widths must be a non-empty sequence of positive integers")
        if self.blocks_per_stage < 1:
            raise InvalidArgumentError("blocks_per_stage must be >= 1")
        if self.emb_dim < 2 or self.emb_dim % 2:
            raise InvalidArgumentError("emb_dim must be an even integer >= 2")
        factor = 2 ** (len(self.widths) - 1)
        if self.image_size <= 0 or self.image_size % factor:
            raise InvalidArgumentError(
                f"image_size {self.image_size} must be a positive multiple of {factor}"
            )

    def to_dict(self) -> dict:
        """Return a JSON-serializable descriptor."""
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def _groups(channels: int) -> int:
    return math.gcd(8, channels)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(MAX_PERIOD) * torch.arange(half, dtype=torch.float64, device=t.device) / half
    )
    args = t.double()[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    """GroupNorm-SiLU-conv residual block with an additive embedding."""

    def __init__(self, in_ch: int, out_ch: int, emb_dim: int) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class DiffusionModel(nn.Module):
    """Conditional U-Net predicting the noise added to x_t.

    The class-embedding table has one entry per ``ClassToken``; the
    UNCONDITIONAL entry is what classifier-free guidance samples against.
    """

    def __init__(self, config: UNetConfig) -> None:
        super().__init__()
        self.config = config
        widths = config.widths
        emb = config.emb_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(emb, emb * 2),
            nn.SiLU(),
            nn.Linear(emb * 2, emb),
        )
        self.class_emb = nn.Embedding(NUM_CLASS_TOKENS, emb)
        self.stem = nn.Conv2d(1, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        ch = widths[0]
        for i, w in enumerate(widths):
            stage = nn.ModuleList()
            for _ in range(config.blocks_per_stage):
                stage.append(ResBlock(ch, w, emb))
                ch = w
            self.down_blocks.append(stage)
            if i < len(widths) - 1:
                self.downsamples.append(nn.Conv2d(w, w, 3, stride=2, padding=1))

        self.mid = ResBlock(ch, ch, emb)

        self.upsamples = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for i in reversed(range(len(widths))):
            w = widths[i]
            if i < len(widths) - 1:
                self.upsamples.append(nn.Conv2d(ch, w, 3, padding=1))
                ch = w
            stage = nn.ModuleList([ResBlock(ch + w, w, emb)])
            for _ in range(config.blocks_per_stage - 1):
                stage.append(ResBlock(w, w, emb))
            self.up_blocks.append(stage)
            ch = w

        self.out_norm = nn.GroupNorm(_groups(ch), ch)
        self.out_conv = nn.Conv2d(ch, 1, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        """
        Predict noise.

        Args:
            x: Noised images (B, 1, H, W) in model space
            t: Integer timesteps (B,)
            c: Class tokens (B,)

        Returns:
            Predicted noise, same shape as x
        """
        temb = timestep_embedding(t, self.config.emb_dim).to(x.dtype)
        emb = self.time_mlp(temb) + self.class_emb(c.long())

        h = self.stem(x)
        skips = []
        for i, stage in enumerate(self.down_blocks):
            for block in stage:
                h = block(h, emb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)

        h = self.mid(h, emb)

        for j, stage in enumerate(self.up_blocks):
            if j > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[j - 1](h)
            h = torch.cat([h, skips.pop()], dim=1)
            for block in stage:
                h = block(h, emb)

        return self.out_conv(F.silu(self.out_norm(h)))

    def parameter_count(self) -> int:
        """Total number of parameters."""
        return sum(p.numel() for p in self.parameters())


def build_diffusion_model(config: UNetConfig, seed: int) -> DiffusionModel:
    """
    Build a freshly initialised model, deterministic given the seed.

    The global torch RNG state is restored afterwards.

    Args:
        config: Architecture descriptor
        seed: Initialisation seed

    Returns:
        DiffusionModel in float32
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return DiffusionModel(config)
