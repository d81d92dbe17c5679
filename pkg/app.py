import logging
import os
import sys
import traceback
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import pandas as pd

# Config imports
from config.settings import DEFAULT_PATHS
from src.constants import (
    STREAM_DEGRADE,
    STREAM_SAMPLING,
    STREAM_ZERO_SHOT,
    STREAM_BENCH,
)
from src.runconfig import (
    ConfigError,
    RunConfig,
    config_hash,
    load_config,
    override,
    resolve_output,
)

# Component imports
from components.arguments import build_parser, parse_float_list, parse_int_list
from components.charts import plot_ablation, plot_loss_curve
from components.error_display import (
    display_runtime_error,
    display_validation_error,
    display_warning_banner,
)
from components.results_display import (
    display_checkpoint_summary,
    display_metric_summary,
    display_speed_report,
    display_table,
)

# Model imports
from src.bench import benchmark_speed, parse_arms, run_ablation
from src.checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from src.degradation import DegradationRanges, make_pairs
from src.distill import distill, load_student
from src.metrics import evaluate_images
from src.runtime import restore_one_step, sample_teacher, zero_shot_upsample
from src.tokenizer import PyramidTokenizer, ScaleSchedule
from src.toydata import generate_toy_dataset
from src.training import tokenize_dataset, train_teacher, train_tokenizer
from src.transformer import ScalewiseTransformer

# export
from src.export import (
    export_history_to_csv,
    export_metrics_to_csv,
    export_pairs_to_csv,
    export_parameters_to_json,
    export_reports_to_csv,
    manifest_hashes,
    read_manifest,
    write_table,
)
from src.utils import (
    derive_seed,
    list_images,
    load_image,
    load_image_tensor,
    save_image,
    set_global_seed,
    tensor_to_images,
)

logger = logging.getLogger(__name__)


def setup_logging(verbose: bool = False):
    """Configure the root logger once for the CLI process."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(levelname)s - %(message)s",
        force=True,
    )


def load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise ValueError(f"--seed must be non-negative, got {args.seed}")
        cfg = override(cfg, "run", seed=args.seed)
    return cfg


@contextmanager
def output_lock(directory: Path):
    """
    Exclusive lock file in an output directory for the duration of a stage.

    Raises:
        RuntimeError: If another run already holds the lock
    """
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / DEFAULT_PATHS["lock"]
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise RuntimeError(
            f"Output directory {directory} is locked by another run (remove {lock} if stale)"
        ) from exc
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def _schedule(cfg: RunConfig) -> str:
    return str(ScaleSchedule.from_string(cfg.tokenizer.schedule))


def _load_tokenizer(path, cfg: RunConfig):
    ckpt = load_checkpoint(path, kind="tokenizer", schedule=_schedule(cfg))
    return PyramidTokenizer.from_checkpoint(ckpt), checkpoint_id(path)


def _load_teacher(path, cfg: RunConfig):
    ckpt = load_checkpoint(path, kind="teacher", schedule=_schedule(cfg))
    return ScalewiseTransformer.from_checkpoint(ckpt), checkpoint_id(path)


def _load_student(path, cfg: RunConfig):
    ckpt = load_checkpoint(path, kind="student", schedule=_schedule(cfg))
    return load_student(ckpt), checkpoint_id(path)


def _load_training_images(data_dir, cfg: RunConfig):
    paths = list_images(data_dir)
    if not paths:
        raise ValueError(f"No PNG images found in {data_dir}")
    images = load_image_tensor(paths)
    size = cfg.tokenizer.image_size
    if tuple(images.shape[-2:]) != (size, size):
        raise ValueError(
            f"Images in {data_dir} are {images.shape[-2]}x{images.shape[-1]}, "
            f"config expects {size}x{size}"
        )
    return images


def _load_pairs(manifest_path, cfg: RunConfig):
    df = read_manifest(manifest_path)
    stale = manifest_hashes(df) - {config_hash(cfg)}
    if stale:
        display_warning_banner(
            f"{manifest_path} was produced under config {sorted(stale)}, "
            f"current config is {config_hash(cfg)}"
        )
    return df, load_image_tensor(df["hq_path"]), load_image_tensor(df["lq_path"])


def _save_training_artifacts(result, out: Path, cfg: RunConfig, kind: str, chart: bool = False):
    save_checkpoint(result.checkpoint, out)
    log = export_history_to_csv(result.history, config_hash(cfg))
    write_table(log, out.parent / f"{out.stem}_{DEFAULT_PATHS['loss_log']}")
    if chart:
        plot_loss_curve(log, out.parent / f"{out.stem}_{DEFAULT_PATHS['loss_curve']}",
                        title=f"{kind.capitalize()} losses")
    snapshot = export_parameters_to_json(cfg.to_dict(), {
        "kind": kind, "checkpoint_id": checkpoint_id(out), "config_hash": config_hash(cfg),
        "step": result.checkpoint.step,
    })
    (out.parent / f"{out.stem}_{DEFAULT_PATHS['run_snapshot']}").write_text(snapshot, encoding="utf-8")
    extra = {k: v for k, v in result.checkpoint.meta.items()
             if k in ("train_ce", "uniform_ce", "active_codes", "trainable_fraction")}
    display_checkpoint_summary(kind, out, checkpoint_id(out), result.checkpoint.step, extra)


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------

def run_gen_data(args, cfg: RunConfig):
    out = resolve_output(cfg, args.out)
    size = args.size if args.size is not None else cfg.tokenizer.image_size
    with output_lock(out):
        manifest = generate_toy_dataset(args.n, out, size=size, seed=cfg.run.seed)
        manifest["config_hash"] = config_hash(cfg)
        write_table(manifest, out / DEFAULT_PATHS["manifest"])


def run_degrade(args, cfg: RunConfig):
    ranges = DegradationRanges.from_config(cfg.degradation)
    changes = {}
    if args.sigma_range:
        changes["sigma_range"] = parse_float_list(args.sigma_range, "--sigma-range")
    if args.factors:
        changes["factors"] = parse_float_list(args.factors, "--factors")
    if args.noise_range:
        changes["noise_range"] = parse_float_list(args.noise_range, "--noise-range")
    if args.quality_range:
        changes["quality_range"] = parse_int_list(args.quality_range, "--quality-range")
    if args.lossless:
        changes["lossless"] = True
    if args.impulse is not None:
        changes["impulse_amount"] = args.impulse
    ranges = replace(ranges, **changes)

    out = resolve_output(cfg, args.output)
    manifest = resolve_output(cfg, args.manifest) if args.manifest else out / DEFAULT_PATHS["manifest"]
    with output_lock(out):
        records, failures = make_pairs(
            list_images(args.input), out, ranges,
            seed=derive_seed(cfg.run.seed, STREAM_DEGRADE), workers=cfg.run.workers,
        )
        if not records:
            raise RuntimeError(f"No readable images in {args.input}")
        write_table(export_pairs_to_csv(records, config_hash(cfg)), manifest)
    for path, reason in failures:
        display_warning_banner(f"skipped {path}: {reason}")
    if failures:
        display_validation_error(
            f"{len(failures)} of {len(records) + len(failures)} images unreadable; "
            f"manifest {manifest} lists the other {len(records)}"
        )
        return 1
    return 0


def run_train_tokenizer(args, cfg: RunConfig):
    out = resolve_output(cfg, args.out)
    images = _load_training_images(args.data, cfg)
    with output_lock(out.parent):
        result = train_tokenizer(images, cfg, steps=args.steps)
        _save_training_artifacts(result, out, cfg, "tokenizer")


def run_train_teacher(args, cfg: RunConfig):
    out = resolve_output(cfg, args.out)
    tokenizer, tokenizer_id = _load_tokenizer(args.tokenizer, cfg)
    tokens = tokenize_dataset(tokenizer, _load_training_images(args.data, cfg))
    with output_lock(out.parent):
        result = train_teacher(tokens, tokenizer, cfg, steps=args.steps, tokenizer_id=tokenizer_id)
        _save_training_artifacts(result, out, cfg, "teacher")


def run_distill(args, cfg: RunConfig):
    out = resolve_output(cfg, args.out)
    tokenizer, tokenizer_id = _load_tokenizer(args.tokenizer, cfg)
    teacher, teacher_id = _load_teacher(args.teacher, cfg)
    _, hq, lq = _load_pairs(args.pairs, cfg)
    with output_lock(out.parent):
        result = distill(teacher, tokenizer, hq, lq, cfg, steps=args.steps,
                         teacher_id=teacher_id, tokenizer_id=tokenizer_id)
        _save_training_artifacts(result, out, cfg, "student", chart=True)


def run_restore(args, cfg: RunConfig):
    tokenizer, tokenizer_id = _load_tokenizer(args.tokenizer, cfg)
    student, student_id = _load_student(args.student, cfg)
    lq_path = Path(args.lq)
    paths = list_images(lq_path) if lq_path.is_dir() else [lq_path]
    if not paths:
        raise ValueError(f"No PNG images found in {lq_path}")

    out = resolve_output(cfg, args.out)
    rows = []
    with output_lock(out):
        for path in paths:
            lq = load_image_tensor([path])
            restored, report = restore_one_step(
                lq, student, tokenizer,
                checkpoint_ids={"student": student_id, "tokenizer": tokenizer_id},
            )
            target = out / path.name
            save_image(tensor_to_images(restored)[0], target)
            rows.append({"image": path.name, "output": str(target), **report.to_dict()})
        report_path = resolve_output(cfg, args.report) if args.report else out / DEFAULT_PATHS["report"]
        table = export_reports_to_csv(rows, config_hash(cfg))
        write_table(table, report_path)
    display_table(table[["image", "forward_pass_count", "wall_ms", "transformer_ms"]],
                  title=f"Restored {len(rows)} image(s)")


def run_sample(args, cfg: RunConfig):
    tokenizer, _ = _load_tokenizer(args.tokenizer, cfg)
    teacher, teacher_id = _load_teacher(args.teacher, cfg)
    temperature = args.temperature if args.temperature is not None else cfg.sampling.temperature
    top_k = args.top_k if args.top_k is not None else cfg.sampling.top_k

    out = resolve_output(cfg, args.out)
    with output_lock(out):
        tokens, report = sample_teacher(teacher, args.n, temperature,
                                        seed=derive_seed(cfg.run.seed, STREAM_SAMPLING), top_k=top_k)
        images = tensor_to_images(tokenizer.detokenize(tokens))
        for i, img in enumerate(images):
            save_image(img, out / f"sample_{i:04d}.png")
        row = {"samples": args.n, "temperature": temperature, "top_k": top_k,
               "teacher_id": teacher_id, **report.to_dict()}
        write_table(export_reports_to_csv([row], config_hash(cfg)), out / DEFAULT_PATHS["report"])
    logger.info("Sampled %d images with %d teacher passes", args.n, report.forward_pass_count)


def run_zeroshot(args, cfg: RunConfig):
    tokenizer, _ = _load_tokenizer(args.tokenizer, cfg)
    teacher, teacher_id = _load_teacher(args.teacher, cfg)
    scales = parse_int_list(args.s, "--s")
    if not scales:
        raise ValueError("--s needs at least one scale")
    temperature = args.temperature if args.temperature is not None else cfg.sampling.temperature

    paths = list_images(args.lq)
    if not paths:
        raise ValueError(f"No PNG images found in {args.lq}")
    lq = load_image_tensor(paths)

    out = resolve_output(cfg, args.out)
    rows = []
    with output_lock(out):
        for s in scales:
            images, _, report = zero_shot_upsample(
                lq, s, teacher, tokenizer, seed=derive_seed(cfg.run.seed, STREAM_ZERO_SHOT, s),
                temperature=temperature, top_k=cfg.sampling.top_k,
            )
            for path, img in zip(paths, tensor_to_images(images)):
                save_image(img, out / f"s{s}" / path.name)
            rows.append({"s": s, "images": len(paths), "temperature": temperature,
                         "teacher_id": teacher_id, **report.to_dict()})
        table = export_reports_to_csv(rows, config_hash(cfg))
        write_table(table, out / DEFAULT_PATHS["report"])
    display_table(table[["s", "images", "forward_pass_count", "wall_ms"]], title="Zero-shot completion")


def run_evaluate(args, cfg: RunConfig):
    df = read_manifest(args.pairs)
    restored_dir = Path(args.restored)
    if not restored_dir.is_dir():
        raise ValueError(f"Restored directory does not exist: {restored_dir}")

    hashes = manifest_hashes(df)
    restore_report = restored_dir / DEFAULT_PATHS["report"]
    if restore_report.is_file():
        hashes |= manifest_hashes(pd.read_csv(restore_report, dtype={"config_hash": str}))
    mismatched = hashes - {config_hash(cfg)}
    if mismatched:
        message = (f"Config hash mismatch: artifacts carry {sorted(mismatched)}, "
                   f"current config is {config_hash(cfg)}")
        if not args.force:
            raise ValueError(f"{message} (use --force to evaluate anyway)")
        display_warning_banner(message)

    def rows():
        for record in df.itertuples(index=False):
            name = Path(record.lq_path).name
            restored = restored_dir / name
            if not restored.is_file():
                raise ValueError(f"Restored image missing for {name} in {restored_dir}")
            yield name, load_image(restored), load_image(record.hq_path), load_image(record.lq_path)

    out = resolve_output(cfg, args.out)
    with output_lock(out.parent):
        report = evaluate_images(rows(), config_hash=config_hash(cfg))
        write_table(export_metrics_to_csv(report), out)
    display_metric_summary(report.means, report.count)


def run_ablate(args, cfg: RunConfig):
    arms = parse_arms(args.arms)
    tokenizer, _ = _load_tokenizer(args.tokenizer, cfg)
    teacher, _ = _load_teacher(args.teacher, cfg)
    _, hq, lq = _load_pairs(args.pairs or cfg.paths.pairs, cfg)
    _, holdout_hq, holdout_lq = _load_pairs(args.holdout or cfg.paths.holdout_pairs, cfg)

    out = resolve_output(cfg, args.out)
    with output_lock(out.parent):
        table = run_ablation(cfg, arms, teacher, tokenizer, hq, lq, holdout_hq, holdout_lq,
                             steps=args.steps)
        write_table(table, out)
        plot_ablation(table, out.with_suffix(".png"))
    display_table(table[["arm", "psnr", "ssim", "psnr_lq", "ssim_lq", "config_diff"]],
                  title="Ablation")


def run_bench(args, cfg: RunConfig):
    tokenizer, _ = _load_tokenizer(args.tokenizer, cfg)
    teacher, _ = _load_teacher(args.teacher, cfg)
    student, _ = _load_student(args.student, cfg)
    df = read_manifest(args.pairs)
    n = args.n if args.n is not None else cfg.eval.bench_images
    lq = load_image_tensor(df["lq_path"].iloc[:n])

    out = resolve_output(cfg, args.out)
    with output_lock(out.parent):
        report = benchmark_speed(
            student, teacher, tokenizer, lq, seed=derive_seed(cfg.run.seed, STREAM_BENCH),
            warmup=cfg.eval.warmup, temperature=cfg.sampling.temperature,
            cfg_hash=config_hash(cfg),
        )
        write_table(report.to_frame(), out)
    display_speed_report(report)


COMMANDS = {
    "gen-data": run_gen_data,
    "degrade": run_degrade,
    "train-tokenizer": run_train_tokenizer,
    "train-teacher": run_train_teacher,
    "distill": run_distill,
    "restore": run_restore,
    "sample": run_sample,
    "zeroshot": run_zeroshot,
    "evaluate": run_evaluate,
    "ablate": run_ablate,
    "bench": run_bench,
}


def main(argv=None) -> int:
    """
    Main application entry point.

    Returns:
        0 on success, 1 on a runtime failure, 2 on a usage error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2

    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2

    setup_logging(args.verbose)

    try:
        cfg = load_run_config(args)
    except ConfigError as e:
        display_runtime_error(e)
        return 1
    except ValueError as e:
        display_validation_error(str(e))
        return 2

    set_global_seed(cfg.run.seed)
    logger.info("Running %s (config %s, seed %d)", args.command, config_hash(cfg), cfg.run.seed)

    try:
        code = COMMANDS[args.command](args, cfg)
    except Exception as e:
        logger.debug("".join(traceback.format_exception(e)))
        display_runtime_error(e)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
