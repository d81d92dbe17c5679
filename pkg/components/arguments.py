import argparse

from config.settings import ARM_INFO, SUBCOMMAND_HELP


def _add_steps(parser):
    parser.add_argument("--steps", type=int, default=None,
                        help="Override the configured number of training steps")


def build_parser() -> argparse.ArgumentParser:
    """
    Build the command-line parser.

    Returns:
        argparse.ArgumentParser with one subparser per pipeline stage
    """
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="One-step image restoration by distilling a next-scale prediction model",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="Master seed; overrides [run] seed")
    parser.add_argument("--config", default=None,
                        help="INI run configuration (defaults to the built-in toy config)")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    sub = parser.add_subparsers(dest="command", metavar="<subcommand>")

    p = sub.add_parser("gen-data", help=SUBCOMMAND_HELP["gen-data"])
    p.add_argument("--n", type=int, required=True, help="Number of images")
    p.add_argument("--size", type=int, default=None, help="Image side length")
    p.add_argument("--out", required=True, help="Output directory")

    p = sub.add_parser("degrade", help=SUBCOMMAND_HELP["degrade"])
    p.add_argument("--input", required=True, help="Directory of HQ PNGs")
    p.add_argument("--output", required=True, help="Directory for LQ PNGs")
    p.add_argument("--manifest", default=None, help="Manifest path (default OUTPUT/manifest.csv)")
    p.add_argument("--sigma-range", default=None, help="Blur sigma interval a,b")
    p.add_argument("--factors", default=None, help="Downsample factors, e.g. 1,2,4")
    p.add_argument("--noise-range", default=None, help="Noise sigma interval a,b")
    p.add_argument("--quality-range", default=None, help="JPEG quality interval a,b")
    p.add_argument("--lossless", action="store_true", help="Skip JPEG compression")
    p.add_argument("--impulse", type=float, default=None,
                   help="Salt-and-pepper fraction for an out-of-distribution set")

    p = sub.add_parser("train-tokenizer", help=SUBCOMMAND_HELP["train-tokenizer"])
    p.add_argument("--data", required=True, help="Directory of training PNGs")
    p.add_argument("--out", required=True, help="Checkpoint path")
    _add_steps(p)

    p = sub.add_parser("train-teacher", help=SUBCOMMAND_HELP["train-teacher"])
    p.add_argument("--data", required=True, help="Directory of training PNGs")
    p.add_argument("--tokenizer", required=True, help="Tokenizer checkpoint")
    p.add_argument("--out", required=True, help="Checkpoint path")
    _add_steps(p)

    p = sub.add_parser("distill", help=SUBCOMMAND_HELP["distill"])
    p.add_argument("--teacher", required=True, help="Teacher checkpoint")
    p.add_argument("--tokenizer", required=True, help="Tokenizer checkpoint")
    p.add_argument("--pairs", required=True, help="Paired manifest")
    p.add_argument("--out", required=True, help="Student checkpoint path")
    _add_steps(p)

    p = sub.add_parser("restore", help=SUBCOMMAND_HELP["restore"])
    p.add_argument("--lq", required=True, help="LQ image or directory")
    p.add_argument("--student", required=True, help="Student checkpoint")
    p.add_argument("--tokenizer", required=True, help="Tokenizer checkpoint")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--report", default=None, help="Report path (default OUT/report.csv)")

    p = sub.add_parser("sample", help=SUBCOMMAND_HELP["sample"])
    p.add_argument("--teacher", required=True, help="Teacher checkpoint")
    p.add_argument("--tokenizer", required=True, help="Tokenizer checkpoint")
    p.add_argument("--n", type=int, required=True, help="Number of samples")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None)

    p = sub.add_parser("zeroshot", help=SUBCOMMAND_HELP["zeroshot"])
    p.add_argument("--lq", required=True, help="Directory of LQ PNGs")
    p.add_argument("--s", required=True, help="Scales kept from the LQ pyramid, e.g. 2 or 1,2,3")
    p.add_argument("--teacher", required=True, help="Teacher checkpoint")
    p.add_argument("--tokenizer", required=True, help="Tokenizer checkpoint")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--temperature", type=float, default=None)

    p = sub.add_parser("evaluate", help=SUBCOMMAND_HELP["evaluate"])
    p.add_argument("--pairs", required=True, help="Paired manifest")
    p.add_argument("--restored", required=True, help="Directory of restored PNGs")
    p.add_argument("--out", required=True, help="Metric table path")
    p.add_argument("--force", action="store_true",
                   help="Evaluate even when config hashes disagree")

    p = sub.add_parser("ablate", help=SUBCOMMAND_HELP["ablate"])
    p.add_argument("--arms", default=",".join(ARM_INFO),
                   help=f"Comma-separated subset of {', '.join(ARM_INFO)}")
    p.add_argument("--teacher", required=True, help="Teacher checkpoint")
    p.add_argument("--tokenizer", required=True, help="Tokenizer checkpoint")
    p.add_argument("--pairs", default=None, help="Training manifest (default [paths] pairs)")
    p.add_argument("--holdout", default=None,
                   help="Holdout manifest (default [paths] holdout_pairs)")
    p.add_argument("--out", required=True, help="Ablation table path")
    _add_steps(p)

    p = sub.add_parser("bench", help=SUBCOMMAND_HELP["bench"])
    p.add_argument("--student", required=True, help="Student checkpoint")
    p.add_argument("--teacher", required=True, help="Teacher checkpoint")
    p.add_argument("--tokenizer", required=True, help="Tokenizer checkpoint")
    p.add_argument("--pairs", required=True, help="Manifest whose LQ images are timed")
    p.add_argument("--n", type=int, default=None, help="Number of timed images")
    p.add_argument("--out", required=True, help="Report path")

    return parser


def parse_float_list(text: str, name: str) -> tuple:
    try:
        return tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError as exc:
        raise ValueError(f"Bad value for {name}: '{text}'") from exc


def parse_int_list(text: str, name: str) -> tuple:
    try:
        return tuple(int(item) for item in text.split(",") if item.strip())
    except ValueError as exc:
        raise ValueError(f"Bad value for {name}: '{text}'") from exc
