"""Stage orchestration shared by the CLI commands.

Every stage derives its seed from the config's global seed and a stage
code, so each command is deterministic given its resolved config.
"""
import logging
from dataclasses import asdict, replace
from enum import IntEnum
from typing import Sequence

import torch
import torch.nn as nn

from src.classifier import ClassifierModel, train_classifier
from src.config import PipelineConfig
from src.diffusion import LossRecord, SamplerConfig, generate_pool, pretrain_diffusion
from src.diversity import DiversityReport, compare_diversity
from src.domains import make_imbalanced_split, pretrain_corpus
from src.lora import AdaptedModel, attach_lora, finetune_lora, merge_lora
from src.noise_schedule import NoiseSchedule, build_noise_schedule
from src.samples import Dataset, Label, concat
from src.seeding import derive_seed
from src.sweep import SweepResult, required_pool_size, run_sweep
from src.unet import DiffusionModel

logger = logging.getLogger(__name__)


class Stage(IntEnum):
    """Seed stream of each pipeline stage."""

    PRETRAIN = 1
    ATTACH = 2
    FINETUNE = 3
    GENERATE = 4
    CLASSIFIER = 5
    DIVERSITY = 6


def build_schedule(cfg: PipelineConfig, override: dict | None = None) -> NoiseSchedule:
    """Noise schedule from the config, or from a checkpoint's schedule snapshot."""
    snapshot = override or asdict(cfg.schedule)
    return build_noise_schedule(int(snapshot["T"]), snapshot["kind"])


def real_split(cfg: PipelineConfig) -> tuple[Dataset, Dataset, Dataset]:
    """The configured (train, lora_set, test) split of real data."""
    d = cfg.data
    return make_imbalanced_split(
        cfg.domain,
        cfg.domain_params,
        n_neg=d.n_neg,
        n_pos_train=d.n_pos_train,
        n_pos_lora=d.n_pos_lora,
        test_fraction=d.test_fraction,
        seed=cfg.seed,
        lora_source=d.lora_source,
    )


def stage_pretrain(
    cfg: PipelineConfig,
    sched: NoiseSchedule,
    progress: bool = False,
) -> tuple[DiffusionModel, list[LossRecord]]:
    """Pretrain the base model on a dedicated corpus of both classes."""
    seed = derive_seed(cfg.seed, Stage.PRETRAIN)
    corpus = pretrain_corpus(
        cfg.domain, cfg.domain_params, cfg.pretrain.n_images, cfg.pretrain.positive_fraction, seed
    )
    return pretrain_diffusion(corpus, cfg.pretrain, cfg.unet, sched, seed, progress)


def stage_finetune(
    cfg: PipelineConfig,
    base: DiffusionModel,
    rare: Dataset,
    sched: NoiseSchedule,
    progress: bool = False,
    stream: Sequence[int] = (),
) -> tuple[AdaptedModel, list[LossRecord]]:
    """
    Attach fresh adapters to the base model and fine-tune them on rare images.

    Args:
        stream: Extra seed parts distinguishing repeated fine-tunes (e.g. per fold)
    """
    generator = torch.Generator().manual_seed(derive_seed(cfg.seed, Stage.ATTACH, *stream))
    adapted = attach_lora(base, cfg.lora, generator)
    return finetune_lora(
        adapted, rare, sched, cfg.lora, derive_seed(cfg.seed, Stage.FINETUNE, *stream), progress
    )


def stage_generate(
    cfg: PipelineConfig,
    model: nn.Module,
    sched: NoiseSchedule,
    n: int,
    sampler: SamplerConfig | None = None,
    progress: bool = False,
    stream: Sequence[int] = (),
    id_prefix: str = "synth",
) -> Dataset:
    """
    Generate n synthetic positives; adapters are merged first.

    Sample i uses seed seed0 + i with seed0 derived from the global seed.
    """
    if isinstance(model, AdaptedModel):
        model = merge_lora(model)
    seed0 = derive_seed(cfg.seed, Stage.GENERATE, *stream)
    return generate_pool(
        model, sched, sampler or cfg.sampler, n, seed0,
        domain=cfg.domain, id_prefix=id_prefix, progress=progress,
    )


def stage_sweep(
    cfg: PipelineConfig,
    base: DiffusionModel,
    sched: NoiseSchedule,
    jobs: int = 1,
    progress: bool = False,
) -> SweepResult:
    """
    Fine-tune, generate and run the ratio sweep.

    The evaluation population is the real train and test split. One shared
    adapter and pool are used unless ``sweep.refit_lora_per_fold`` is set,
    in which case each (seed, fold) fine-tunes on its own training positives.
    """
    train, lora_set, test = real_split(cfg)
    population = concat([train, test], provenance="sweep population (real train + test)")
    size = required_pool_size(cfg.sweep, population, cfg.seed)
    logger.info("sweep pool size %d", size)

    if cfg.sweep.refit_lora_per_fold:
        def pool_for(seed_index: int, fold: int, real_train: Dataset) -> Dataset:
            rare = real_train.filter(label=Label.POSITIVE)
            adapted, _ = stage_finetune(cfg, base, rare, sched, progress, stream=(seed_index, fold))
            return stage_generate(
                cfg, adapted, sched, size, progress=progress,
                stream=(seed_index, fold), id_prefix=f"synth-s{seed_index}-f{fold}",
            )
    else:
        adapted, _ = stage_finetune(cfg, base, lora_set, sched, progress)
        shared = stage_generate(cfg, adapted, sched, size, progress=progress)

        def pool_for(seed_index: int, fold: int, real_train: Dataset) -> Dataset:
            return shared

    return run_sweep(
        cfg.sweep, population, pool_for, cfg.train, cfg.classifier, global_seed=cfg.seed, jobs=jobs
    )


def stage_reference_classifier(cfg: PipelineConfig, progress: bool = False) -> ClassifierModel:
    """Train a classifier on the real training split to define the perceptual space."""
    train, _, _ = real_split(cfg)
    train_cfg = replace(cfg.train, seed=derive_seed(cfg.seed, Stage.CLASSIFIER))
    model, _ = train_classifier(train, train_cfg, cfg.classifier, progress)
    return model


def stage_diversity(
    cfg: PipelineConfig,
    real: Dataset,
    synth: Dataset,
    classifier: ClassifierModel,
) -> DiversityReport:
    """Compare real positives against a synthetic set."""
    real_pos = real.filter(label=Label.POSITIVE)
    return compare_diversity(real_pos, synth, classifier, cfg.diversity, derive_seed(cfg.seed, Stage.DIVERSITY))


def loss_rows(log: Sequence[LossRecord]) -> list[tuple[int, float]]:
    """(step, loss) rows of a training curve."""
    return [(r.step, r.loss) for r in log]
