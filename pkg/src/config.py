"""Pipeline configuration: one JSON document layered over a profile bundle.

Resolution order (later wins): dataclass defaults, the profile overlay
(``data/profiles/<name>.json``), the user's config file, CLI overrides.
"""
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from src.classifier import ClassifierConfig, TrainConfig
from src.constants.profiles import load_profile
from src.diffusion import PretrainConfig, SamplerConfig
from src.diversity import DiversityConfig
from src.domains import DomainParams, LoraSource, parse_domain
from src.errors import ConfigFormatError, InvalidArgumentError
from src.lora import LoRAConfig
from src.noise_schedule import ScheduleKind
from src.persistence import write_json
from src.sweep import SweepConfig
from src.unet import UNetConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RESOLVED_CONFIG_NAME = "resolved_config.json"


@dataclass(frozen=True)
class ScheduleConfig:
    """Noise schedule length and kind."""

    T: int = 1000
    kind: str = ScheduleKind.LINEAR.value

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        if self.T < 2:
            raise InvalidArgumentError("schedule T must be >= 2")
        try:
            ScheduleKind(self.kind)
        except ValueError:
            raise InvalidArgumentError(f"unknown schedule kind {self.kind!r}")


@dataclass(frozen=True)
class DataConfig:
    """Sizes of the real imbalanced split."""

    n_neg: int = 1000
    n_pos_train: int = 50
    n_pos_lora: int = 50
    test_fraction: float = 0.2
    lora_source: str = LoraSource.DEDICATED.value

    def __post_init__(self) -> None:
        """Validate configuration parameters."""
        if min(self.n_neg, self.n_pos_train, self.n_pos_lora) < 1:
            raise InvalidArgumentError("n_neg, n_pos_train and n_pos_lora must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise InvalidArgumentError("test_fraction must lie in (0, 1)")
        try:
            LoraSource(self.lora_source)
        except ValueError:
            raise InvalidArgumentError(f"unknown lora_source {self.lora_source!r}")


SECTIONS: dict[str, type] = {
    "domain_params": DomainParams,
    "data": DataConfig,
    "schedule": ScheduleConfig,
    "unet": UNetConfig,
    "pretrain": PretrainConfig,
    "sampler": SamplerConfig,
    "lora": LoRAConfig,
    "classifier": ClassifierConfig,
    "train": TrainConfig,
    "sweep": SweepConfig,
    "diversity": DiversityConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    """Every setting of a run; round-trips losslessly through to_dict/from_dict."""

    schema_version: int = SCHEMA_VERSION
    profile: str = "desk"
    seed: int = 0
    output_dir: str = "runs"
    domain: str = "tilecrack"
    domain_params: DomainParams = field(default_factory=DomainParams)
    data: DataConfig = field(default_factory=DataConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    lora: LoRAConfig = field(default_factory=LoRAConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    diversity: DiversityConfig = field(default_factory=DiversityConfig)

    def __post_init__(self) -> None:
        """Validate cross-section consistency and tie the sweep to the domain."""
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigFormatError(
                f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}"
            )
        parse_domain(self.domain)
        sizes = {
            "domain_params.image_size": self.domain_params.image_size,
            "unet.image_size": self.unet.image_size,
            "classifier.image_size": self.classifier.image_size,
        }
        if len(set(sizes.values())) != 1:
            raise InvalidArgumentError(f"image sizes disagree: {sizes}")
        if self.sampler.steps > self.schedule.T:
            raise InvalidArgumentError(
                f"sampler steps ({self.sampler.steps}) exceed schedule T ({self.schedule.T})"
            )
        if self.sweep.domain != self.domain:
            object.__setattr__(self, "sweep", replace(self.sweep, domain=self.domain))

    @property
    def image_size(self) -> int:
        """Shared image height and width."""
        return self.domain_params.image_size

    def to_dict(self) -> dict:
        """JSON-serializable document."""
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PipelineConfig":
        """
        Build a config from a (possibly partial) document.

        Raises:
            ConfigFormatError: On unknown keys or malformed sections
            InvalidArgumentError: On values that fail validation
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigFormatError(f"unknown config keys: {', '.join(unknown)}")

        kwargs: dict[str, Any] = {}
        for key, value in doc.items():
            section = SECTIONS.get(key)
            if section is None:
                kwargs[key] = value
                continue
            if not isinstance(value, Mapping):
                raise ConfigFormatError(f"config section {key!r} must be an object")
            try:
                kwargs[key] = section(**value)
            except TypeError as exc:
                raise ConfigFormatError(f"config section {key!r}: {exc}") from exc
        return cls(**kwargs)


def deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict:
    """Recursively merge override into a copy of base; non-mapping values replace."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_config(doc: Mapping[str, Any], profile: str | None = None, profile_dir: Path | None = None) -> PipelineConfig:
    """
    Layer a config document over the selected profile.

    The profile is the explicit argument, else the document's own
    ``profile`` key, else RARESYNTH_PROFILE, else desk.
    """
    name = profile or doc.get("profile")
    return PipelineConfig.from_dict(deep_merge(load_profile(name, profile_dir), doc))


def load_config(path: str | Path, profile: str | None = None, profile_dir: Path | None = None) -> PipelineConfig:
    """
    Load a config file layered over the selected profile.

    Args:
        path: JSON config path
        profile: Profile name (defaults to RARESYNTH_PROFILE, then desk)
        profile_dir: Profile directory override

    Returns:
        Resolved PipelineConfig

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigFormatError: If it is not a valid config document
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigFormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigFormatError(f"{path}: config must be a JSON object")
    cfg = resolve_config(doc, profile, profile_dir)
    logger.debug("loaded config %s (profile %s)", path, cfg.profile)
    return cfg


def write_resolved_config(out_dir: str | Path, cfg: PipelineConfig) -> Path:
    """Write resolved_config.json into an output directory."""
    return write_json(Path(out_dir) / RESOLVED_CONFIG_NAME, cfg.to_dict())
