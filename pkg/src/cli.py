"""CLI module for raresynth."""
import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Callable, Sequence

from src import pipeline
from src.checkpoint import (
    adapter_archive,
    adapter_from_archive,
    classifier_archive,
    classifier_from_archive,
    diffusion_archive,
    diffusion_from_archive,
    load_checkpoint,
    save_checkpoint,
)
from src.config import PipelineConfig, load_config, write_resolved_config
from src.errors import InvalidArgumentError, error_category, exit_code_for
from src.image_loader import export_dataset, load_image_dir
from src.persistence import atomic_write_text, write_csv, write_json
from src.sweep import read_results, write_aggregates, write_results
from src.visualize import format_analysis, format_report_table, render_histogram, render_ratio_plot

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LOSS_HEADER = ("step", "loss")


def parse_args(args: Sequence[str]) -> argparse.Namespace:
    """
    Parse command line arguments.

    Args:
        args: Command line arguments

    Returns:
        Parsed arguments namespace
    """
    parser = argparse.ArgumentParser(
        prog='raresynth',
        description='Rare-class synthetic data augmentation with LoRA-adapted diffusion',
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='Log at DEBUG level')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='Log warnings and errors only')
    parser.add_argument('--progress', action='store_true', help='Show progress bars')

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=str, required=True, help='Path to the JSON config')
    common.add_argument('--out', type=str, default=None, help='Output directory (default: config output_dir)')
    common.add_argument('--seed', type=int, default=None, help='Override the global seed')
    common.add_argument('--jobs', type=int, default=1, help='Sweep worker processes (default: 1)')

    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('pretrain', parents=[common], help='Pretrain the base diffusion model')

    finetune = sub.add_parser('finetune', parents=[common], help='Fine-tune LoRA adapters on rare images')
    finetune.add_argument('--base', type=str, required=True, help='Base diffusion checkpoint')
    finetune.add_argument('--rare-dir', type=str, default=None,
                          help='Image directory of rare positives (default: generated LoRA set)')

    generate = sub.add_parser('generate', parents=[common], help='Generate synthetic positives')
    generate.add_argument('--checkpoint', type=str, required=True, help='Diffusion checkpoint')
    generate.add_argument('--adapter', type=str, default=None, help='Adapter checkpoint')
    generate.add_argument('--n', type=int, default=None, help='Number of images (default: sweep pool_size)')
    generate.add_argument('--steps', type=int, default=None, help='Sampler steps')
    generate.add_argument('--guidance-scale', type=float, default=None, help='Classifier-free guidance scale')
    generate.add_argument('--eta', type=float, default=None, help='Sampler stochasticity in [0, 1]')

    sweep = sub.add_parser('sweep', parents=[common], help='Run the synthetic-ratio sweep')
    sweep.add_argument('--base', type=str, default=None, help='Base checkpoint (default: pretrain first)')

    diversity = sub.add_parser('diversity', parents=[common], help='Compare real and synthetic diversity')
    diversity.add_argument('--real-dir', type=str, required=True, help='Real image directory')
    diversity.add_argument('--synth-dir', type=str, required=True, help='Synthetic image directory')
    diversity.add_argument('--classifier', type=str, default=None,
                           help='Classifier checkpoint (default: train one on the real split)')

    report = sub.add_parser('report', help='Print the results table')
    report.add_argument('--results', type=str, required=True, help='Results CSV of a sweep')
    report.add_argument('--out', type=str, default=None, help='Also write report.md here')

    return parser.parse_args(args)


def configure_logging(args: argparse.Namespace) -> None:
    """Configure root logging on stderr from the verbosity flags."""
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def resolve(args: argparse.Namespace) -> tuple[PipelineConfig, Path]:
    """
    Load the config, apply CLI overrides and prepare the output directory.

    Returns:
        Tuple of (config, output directory)
    """
    if args.jobs < 1:
        raise InvalidArgumentError("--jobs must be >= 1")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(out, cfg)
    return cfg, out


def _load_base(cfg: PipelineConfig, path: str):
    archive = load_checkpoint(path, kind="diffusion")
    model = diffusion_from_archive(archive)
    sched = pipeline.build_schedule(cfg, archive.config.get("schedule"))
    return model, sched


def _save_base(cfg: PipelineConfig, out: Path, model, log) -> Path:
    return save_checkpoint(out / "base.ckpt", diffusion_archive(
        model,
        config={"schedule": asdict(cfg.schedule), "pretrain": asdict(cfg.pretrain), "seed": cfg.seed},
        metadata={"steps": len(log), "final_loss": log[-1].loss if log else None},
    ))


def cmd_pretrain(args: argparse.Namespace) -> int:
    """Pretrain the base model; writes base.ckpt and pretrain_loss.csv."""
    cfg, out = resolve(args)
    sched = pipeline.build_schedule(cfg)
    model, log = pipeline.stage_pretrain(cfg, sched, args.progress)
    ckpt = _save_base(cfg, out, model, log)
    write_csv(out / "pretrain_loss.csv", LOSS_HEADER, pipeline.loss_rows(log))
    print(f"wrote {ckpt}")
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    """Fine-tune adapters; writes adapter.ckpt and finetune_loss.csv."""
    cfg, out = resolve(args)
    base, sched = _load_base(cfg, args.base)
    if args.rare_dir:
        rare = load_image_dir(args.rare_dir, image_size=cfg.image_size, domain=cfg.domain)
    else:
        _, rare, _ = pipeline.real_split(cfg)
    adapted, log = pipeline.stage_finetune(cfg, base, rare, sched, args.progress)
    ckpt = save_checkpoint(out / "adapter.ckpt", adapter_archive(
        adapted,
        config={"seed": cfg.seed, "rare_images": len(rare)},
        metadata={"steps": len(log), "final_loss": log[-1].loss if log else None},
    ))
    write_csv(out / "finetune_loss.csv", LOSS_HEADER, pipeline.loss_rows(log))
    print(f"wrote {ckpt}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    """Generate synthetic positives; writes images/*.png and manifest.csv."""
    cfg, out = resolve(args)
    model, sched = _load_base(cfg, args.checkpoint)
    if args.adapter:
        model = adapter_from_archive(model, load_checkpoint(args.adapter, kind="adapter"))

    overrides = {
        key: value for key, value in (
            ("steps", args.steps), ("guidance_scale", args.guidance_scale), ("eta", args.eta),
        ) if value is not None
    }
    sampler = replace(cfg.sampler, **overrides)
    n = args.n if args.n is not None else cfg.sweep.pool_size
    pool = pipeline.stage_generate(cfg, model, sched, n, sampler, args.progress)
    manifest = export_dataset(pool, out)
    print(f"wrote {len(pool)} images and {manifest}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    """Run the sweep; writes results.csv, aggregate.csv and ratio_scaling.svg."""
    cfg, out = resolve(args)
    if args.base:
        base, sched = _load_base(cfg, args.base)
    else:
        sched = pipeline.build_schedule(cfg)
        base, log = pipeline.stage_pretrain(cfg, sched, args.progress)
        _save_base(cfg, out, base, log)

    result = pipeline.stage_sweep(cfg, base, sched, args.jobs, args.progress)
    write_results(out / "results.csv", result.results)
    write_aggregates(out / "aggregate.csv", result.aggregates)
    atomic_write_text(out / "ratio_scaling.svg", render_ratio_plot(
        result.aggregates, title=f"{cfg.domain}: metric vs synthetic-to-real ratio",
    ))
    print(format_report_table(result.results))
    return 0


def cmd_diversity(args: argparse.Namespace) -> int:
    """Diversity analysis; writes diversity_report.json and two histogram SVGs."""
    cfg, out = resolve(args)
    real = load_image_dir(args.real_dir, image_size=cfg.image_size, domain=cfg.domain)
    synth = load_image_dir(args.synth_dir, image_size=cfg.image_size, domain=cfg.domain)
    if args.classifier:
        classifier = classifier_from_archive(load_checkpoint(args.classifier, kind="classifier"))
    else:
        classifier = pipeline.stage_reference_classifier(cfg, args.progress)
        save_checkpoint(out / "classifier.ckpt", classifier_archive(
            classifier, config={"train": asdict(cfg.train), "seed": cfg.seed},
        ))

    report = pipeline.stage_diversity(cfg, real, synth, classifier)
    write_json(out / "diversity_report.json", report.to_dict())
    atomic_write_text(out / "psnr_hist.svg", render_histogram(
        report.psnr_real, report.psnr_synth, "Pairwise PSNR", "PSNR (dB)",
    ))
    atomic_write_text(out / "perceptual_hist.svg", render_histogram(
        report.percep_real, report.percep_synth, "Pairwise perceptual distance (surrogate)", "distance",
    ))
    verdict = report.to_dict()["verdict"]
    print(f"structure_preserved={verdict['structure_preserved']} collapse_suspected={verdict['collapse_suspected']}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Print the results table and analysis; writes report.md when --out is given."""
    results = read_results(args.results)
    if not results:
        raise InvalidArgumentError(f"{args.results}: no result rows")
    text = format_report_table(results) + "\n\n" + format_analysis(results) + "\n"
    print(text, end="")
    if args.out:
        atomic_write_text(Path(args.out) / "report.md", text)
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    'pretrain': cmd_pretrain,
    'finetune': cmd_finetune,
    'generate': cmd_generate,
    'sweep': cmd_sweep,
    'diversity': cmd_diversity,
    'report': cmd_report,
}


def run(args: argparse.Namespace) -> int:
    """
    Run a command.

    Args:
        args: Parsed arguments

    Returns:
        Exit code (0 for success, category-specific non-zero for error)
    """
    configure_logging(args)
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        message = " ".join(str(e).split()) or type(e).__name__
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"error[{error_category(e)}]: {message}", file=sys.stderr)
        return exit_code_for(e)


def main() -> int:
    """
    Main entry point.

    Returns:
        Exit code
    """
    args = parse_args(sys.argv[1:])
    return run(args)


if __name__ == '__main__':
    sys.exit(main())
