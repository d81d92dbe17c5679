"""Run configuration: one frozen dataclass per INI section."""

import configparser
import dataclasses
import hashlib
import logging
import os
import re
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from config.settings import OUTPUT_ROOT_ENV
from .constants import (
    IMAGE_SIZE,
    DOWNSAMPLE_FACTOR,
    EMBED_DIM,
    VOCAB_SIZE,
    DEFAULT_SCHEDULE,
    TOKENIZER_HIDDEN,
    COMMITMENT_WEIGHT,
    EMA_DECAY,
    DEAD_CODE_THRESHOLD,
    BACKBONE_LAYERS,
    MODEL_DIM,
    NUM_HEADS,
    ADAPTER_RANK,
    ADAPTER_ALPHA,
    ADAPTER_TARGETS,
    LAMBDA_KL,
    LAMBDA_PERC,
    LAMBDA_MSE,
    DISTILL_LR,
    DISTILL_WEIGHT_DECAY,
    RESTORER_CHANNELS,
    RESTORER_WEIGHT,
    SIGMA_RANGE,
    DOWNSAMPLE_FACTORS,
    NOISE_RANGE,
    QUALITY_RANGE,
    DEFAULT_TEMPERATURE,
    CONFIG_HASH_CHARS,
)
from .tokenizer import parse_scales
from .validation import validate_run_config

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for unparseable config files, unknown keys and invalid values."""


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    workers: int = 4
    log_every: int = 100


@dataclass(frozen=True)
class TokenizerSection:
    image_size: int = IMAGE_SIZE
    downsample: int = DOWNSAMPLE_FACTOR
    embed_dim: int = EMBED_DIM
    vocab: int = VOCAB_SIZE
    hidden: int = TOKENIZER_HIDDEN
    schedule: str = DEFAULT_SCHEDULE
    steps: int = 5000
    batch_size: int = 16
    lr: float = 1e-3
    commitment: float = COMMITMENT_WEIGHT
    ema_decay: float = EMA_DECAY
    dead_threshold: float = DEAD_CODE_THRESHOLD

    @property
    def scales(self) -> Tuple[Tuple[int, int], ...]:
        return parse_scales(self.schedule)


@dataclass(frozen=True)
class BackboneSection:
    layers: int = BACKBONE_LAYERS
    model_dim: int = MODEL_DIM
    heads: int = NUM_HEADS
    conditioning_dim: int = 0    # 0 disables the condition vector


@dataclass(frozen=True)
class TeacherSection:
    steps: int = 5000
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 1e-2


@dataclass(frozen=True)
class AdapterSection:
    rank: int = ADAPTER_RANK
    alpha: float = ADAPTER_ALPHA
    targets: Tuple[str, ...] = ADAPTER_TARGETS


@dataclass(frozen=True)
class LossSection:
    lambda_kl: float = LAMBDA_KL
    lambda_perc: float = LAMBDA_PERC
    lambda_mse: float = LAMBDA_MSE


@dataclass(frozen=True)
class DistillSection:
    steps: int = 5000
    batch_size: int = 16
    lr: float = DISTILL_LR
    weight_decay: float = DISTILL_WEIGHT_DECAY
    mask_mode: str = "full"
    use_prerestorer: bool = True
    restorer_channels: int = RESTORER_CHANNELS
    restorer_weight: float = RESTORER_WEIGHT
    one_step: bool = True        # False evaluates the zero-shot teacher instead


@dataclass(frozen=True)
class DegradationSection:
    sigma_range: Tuple[float, float] = SIGMA_RANGE
    factors: Tuple[float, ...] = DOWNSAMPLE_FACTORS
    noise_range: Tuple[float, float] = NOISE_RANGE
    quality_range: Tuple[int, int] = QUALITY_RANGE
    lossless: bool = False
    impulse_amount: float = 0.0


@dataclass(frozen=True)
class SamplingSection:
    temperature: float = DEFAULT_TEMPERATURE
    top_k: int = 0               # 0 keeps the full distribution
    zero_shot_scale: int = 2


@dataclass(frozen=True)
class EvalSection:
    holdout: int = 200
    bench_images: int = 50
    warmup: int = 2


@dataclass(frozen=True)
class PathsSection:
    output_root: str = "runs"
    data_dir: str = "data/hq"
    pairs: str = "data/pairs.csv"
    holdout_pairs: str = "data/holdout.csv"


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    loss: LossSection = field(default_factory=LossSection)
    distill: DistillSection = field(default_factory=DistillSection)
    degradation: DegradationSection = field(default_factory=DegradationSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTION_TYPES = typing.get_type_hints(RunConfig)

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


# ----------------------------------------------------------------------------
# Value coercion
# ----------------------------------------------------------------------------

def _coerce_scalar(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got '{raw}'")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _coerce(raw: str, hint):
    if typing.get_origin(hint) is tuple:
        args = typing.get_args(hint)
        items = [item for item in raw.split(",") if item.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce_scalar(item, args[0]) for item in items)
        if len(items) != len(args):
            raise ValueError(f"expected {len(args)} comma-separated values, got '{raw}'")
        return tuple(_coerce_scalar(item, kind) for item, kind in zip(items, args))
    return _coerce_scalar(raw, hint)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ----------------------------------------------------------------------------
# Parsing
# ----------------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:\s#;\[][^=:]*?)\s*[=:]")


def _line_numbers(text: str) -> Dict[Tuple[str, str], int]:
    """Map (section, key) and (section, "") to 1-based line numbers."""
    lines, section = {}, ""
    for number, line in enumerate(text.splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            section = match.group(1).strip()
            lines.setdefault((section, ""), number)
            continue
        match = _KEY_RE.match(line)
        if match:
            lines.setdefault((section, match.group(1).strip()), number)
    return lines


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """
    Parse INI text into a RunConfig.

    Raises:
        ConfigError: On syntax errors, unknown sections or keys, bad values,
            or an internally inconsistent configuration. Messages name the
            source, the line number and the offending key.
    """
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}, line {exc.lineno}: key outside any [section]") from exc
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{source}, line {lineno}: cannot parse {line}") from exc
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigError(f"{source}, line {exc.lineno}: {exc.message}") from exc

    lines = _line_numbers(text)
    if parser.defaults():
        raise ConfigError(f"{source}: the [DEFAULT] section is not supported")

    sections = {}
    for name in parser.sections():
        if name not in SECTION_TYPES:
            raise ConfigError(
                f"{source}, line {lines.get((name, ''), '?')}: unknown section [{name}]"
            )
        cls = SECTION_TYPES[name]
        hints = typing.get_type_hints(cls)
        values = {}
        for key, raw in parser.items(name):
            line = lines.get((name, key), "?")
            if key not in hints:
                raise ConfigError(f"{source}, line {line}: unknown key '{key}' in [{name}]")
            try:
                values[key] = _coerce(raw, hints[key])
            except ValueError as exc:
                raise ConfigError(f"{source}, line {line}: bad value for '{key}': {exc}") from exc
        sections[name] = cls(**values)

    cfg = RunConfig(**sections)
    try:
        is_valid, error = validate_run_config(cfg)
    except ValueError as exc:
        is_valid, error = False, f"Tokenizer Error: {exc}"
    if not is_valid:
        raise ConfigError(f"{source}: {error}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"), source=str(path))
    logger.info("Loaded config %s (hash %s)", path, config_hash(cfg))
    return cfg


def config_text(cfg: RunConfig) -> str:
    """Canonical INI text: fixed section and key order, round-trippable values."""
    blocks = []
    for section in dataclasses.fields(cfg):
        body = getattr(cfg, section.name)
        lines = [f"[{section.name}]"]
        for item in dataclasses.fields(body):
            lines.append(f"{item.name} = {_format(getattr(body, item.name))}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def save_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_text(cfg), encoding="utf-8")
    return path


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(config_text(cfg).encode("utf-8")).hexdigest()[:CONFIG_HASH_CHARS]


# ----------------------------------------------------------------------------
# Overrides and diffs
# ----------------------------------------------------------------------------

def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    """Copy of cfg with keys of one section replaced."""
    if section not in SECTION_TYPES:
        raise ValueError(f"Unknown config section: {section}")
    body = getattr(cfg, section)
    unknown = set(values) - {f.name for f in dataclasses.fields(body)}
    if unknown:
        raise ValueError(f"Unknown key(s) {sorted(unknown)} in section [{section}]")
    return dataclasses.replace(cfg, **{section: dataclasses.replace(body, **values)})


def config_diff(a: RunConfig, b: RunConfig) -> List[str]:
    """Dotted keys whose values differ between two configs."""
    changed = []
    for section in dataclasses.fields(a):
        left, right = getattr(a, section.name), getattr(b, section.name)
        for item in dataclasses.fields(left):
            if getattr(left, item.name) != getattr(right, item.name):
                changed.append(f"{section.name}.{item.name}")
    return changed


def output_root(cfg: RunConfig) -> Path:
    """Output root, relocated by the environment override when set."""
    return Path(os.environ.get(OUTPUT_ROOT_ENV) or cfg.paths.output_root)


def resolve_output(cfg: RunConfig, path) -> Path:
    path = Path(path)
    if path.is_absolute() or not os.environ.get(OUTPUT_ROOT_ENV):
        return path
    return output_root(cfg) / path
