"""Training loops for the pyramid tokenizer and the next-scale teacher."""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from .checkpoint import Checkpoint
from .runconfig import RunConfig, config_hash
from .tokenizer import PyramidTokenizer, ScaleSchedule
from .transformer import ScalewiseTransformer, build_backbone
from .constants import STREAM_TOKENIZER, STREAM_TEACHER
from .utils import derive_seed, torch_generator

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    """Raised when a training loss becomes NaN or infinite."""


@dataclass
class TrainingResult:
    model: torch.nn.Module
    checkpoint: Checkpoint
    history: List[dict] = field(default_factory=list)


def check_finite(step: int, **terms) -> None:
    """Abort with every term listed when any of them is not finite."""
    values = {name: float(value) for name, value in terms.items()}
    if not all(math.isfinite(v) for v in values.values()):
        detail = ", ".join(f"{name}={value}" for name, value in values.items())
        raise NonFiniteLossError(f"Non-finite loss at step {step}: {detail}")


def batch_indices(n_items: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Sorted batch of distinct indices for one step, derived from (seed, step)."""
    rng = np.random.default_rng(derive_seed(seed, step))
    return np.sort(rng.choice(n_items, size=min(batch_size, n_items), replace=False))


def log_step(step: int, total: int, log_every: int, record: dict) -> None:
    logger.debug("step %d: %s", step, record)
    if step == 1 or step == total or step % max(1, log_every) == 0:
        detail = " | ".join(f"{k}: {v:.5f}" for k, v in record.items()
                            if isinstance(v, float))
        logger.info("Step %d/%d | %s", step, total, detail)


# ----------------------------------------------------------------------------
# Tokenizer
# ----------------------------------------------------------------------------

def build_tokenizer(cfg: RunConfig) -> PyramidTokenizer:
    tok = cfg.tokenizer
    torch.manual_seed(derive_seed(cfg.run.seed, STREAM_TOKENIZER, 0))
    return PyramidTokenizer(
        schedule=ScaleSchedule.from_string(tok.schedule),
        vocab=tok.vocab,
        embed_dim=tok.embed_dim,
        hidden=tok.hidden,
        downsample=tok.downsample,
        commitment=tok.commitment,
        ema_decay=tok.ema_decay,
        dead_threshold=tok.dead_threshold,
        seed=derive_seed(cfg.run.seed, STREAM_TOKENIZER, 1),
    )


def tokenizer_checkpoint(model: PyramidTokenizer, cfg: RunConfig, step: int,
                         generator: Optional[torch.Generator] = None,
                         extra: Optional[dict] = None) -> Checkpoint:
    meta = {**model.meta(), "config_hash": config_hash(cfg),
            "active_codes": model.quantizer.active_fraction(),
            "usage_per_scale": model.quantizer.usage_per_scale(), **(extra or {})}
    return Checkpoint.from_module("tokenizer", model, cfg.to_dict(), step, generator, meta)


def train_tokenizer(images: torch.Tensor, cfg: RunConfig, steps: Optional[int] = None,
                    progress: bool = True) -> TrainingResult:
    """
    Train the tokenizer with reconstruction MSE plus commitment loss.

    Args:
        images: (N, C, H, W) float tensor in [0, 1]
        cfg: Run configuration ([tokenizer] section drives the recipe)
        steps: Override for cfg.tokenizer.steps
        progress: Show a tqdm progress bar

    Raises:
        ValueError: On an empty dataset
        NonFiniteLossError: If the loss diverges
    """
    if images.shape[0] == 0:
        raise ValueError("Cannot train the tokenizer on an empty dataset")

    tok = cfg.tokenizer
    steps = tok.steps if steps is None else steps
    model = build_tokenizer(cfg)
    model.train()
    optimizer = torch.optim.AdamW(
        list(model.encoder.parameters()) + list(model.decoder.parameters()), lr=tok.lr
    )
    generator = torch_generator(derive_seed(cfg.run.seed, STREAM_TOKENIZER, 2))
    batch_seed = derive_seed(cfg.run.seed, STREAM_TOKENIZER, 3)

    history = []
    for step in tqdm(range(1, steps + 1), desc="Training tokenizer", disable=not progress):
        batch = images[batch_indices(images.shape[0], tok.batch_size, batch_seed, step)]
        start = time.perf_counter()

        out = model(batch, generator)
        check_finite(step, rec=out["rec_loss"].item(), commit=out["commit_loss"].item())

        optimizer.zero_grad()
        out["loss"].backward()
        optimizer.step()

        record = {
            "step": step,
            "rec_loss": out["rec_loss"].item(),
            "commit_loss": out["commit_loss"].item(),
            "loss": out["loss"].item(),
            "reseeded": out["reseeded"],
            "wall_ms": (time.perf_counter() - start) * 1000.0,
        }
        history.append(record)
        log_step(step, steps, cfg.run.log_every, record)

    model.eval()
    logger.info("Tokenizer trained: %.1f%% of codes active, per-scale usage %s",
                100.0 * model.quantizer.active_fraction(),
                [round(u, 3) for u in model.quantizer.usage_per_scale()])
    return TrainingResult(model, tokenizer_checkpoint(model, cfg, steps, generator), history)


@torch.no_grad()
def tokenize_dataset(tokenizer: PyramidTokenizer, images: torch.Tensor,
                     chunk: int = 64) -> List[torch.Tensor]:
    """Token pyramid of a whole image tensor, tokenized in chunks."""
    pieces = [tokenizer.tokenize(images[i:i + chunk]) for i in range(0, images.shape[0], chunk)]
    return [torch.cat([p[k] for p in pieces]) for k in range(len(tokenizer.schedule))]


# ----------------------------------------------------------------------------
# Teacher
# ----------------------------------------------------------------------------

def next_scale_loss(logits: Sequence[torch.Tensor], tokens: Sequence[torch.Tensor]) -> torch.Tensor:
    """Mean cross-entropy over every token of every scale."""
    flat_logits = torch.cat([l.reshape(-1, l.shape[-1]) for l in logits])
    flat_targets = torch.cat([t.reshape(-1) for t in tokens])
    return F.cross_entropy(flat_logits, flat_targets)


@torch.no_grad()
def teacher_cross_entropy(teacher: ScalewiseTransformer, tokens: Sequence[torch.Tensor],
                          batch_size: int = 64) -> float:
    """Mean next-scale cross-entropy in nats; ln(V) is the uniform baseline."""
    total, count = 0.0, 0
    n = tokens[0].shape[0]
    for start in range(0, n, batch_size):
        batch = [t[start:start + batch_size] for t in tokens]
        logits = teacher.teacher_forward(batch)
        positions = sum(t.numel() for t in batch)
        total += next_scale_loss(logits, batch).item() * positions
        count += positions
    return total / count


def teacher_checkpoint(teacher: ScalewiseTransformer, cfg: RunConfig, step: int,
                       tokenizer_id: str = "", extra: Optional[dict] = None) -> Checkpoint:
    meta = {**teacher.meta(), "config_hash": config_hash(cfg),
            "tokenizer_id": tokenizer_id, **(extra or {})}
    return Checkpoint.from_module("teacher", teacher, cfg.to_dict(), step, None, meta)


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    for param in module.parameters():
        param.requires_grad = False
    return module.eval()


def train_teacher(tokens: Sequence[torch.Tensor], tokenizer: PyramidTokenizer, cfg: RunConfig,
                  steps: Optional[int] = None, tokenizer_id: str = "",
                  progress: bool = True) -> TrainingResult:
    """
    Train the next-scale teacher with teacher forcing.

    Args:
        tokens: HQ token pyramid of the training corpus, (N, h_k, w_k) per scale
        tokenizer: Trained tokenizer whose codebook the teacher embeds
        cfg: Run configuration ([backbone] and [teacher] sections)
        steps: Override for cfg.teacher.steps
        tokenizer_id: Checkpoint id recorded in the teacher header

    Raises:
        ValueError: On an empty corpus
        NonFiniteLossError: If the loss diverges
    """
    if len(tokens) == 0 or tokens[0].shape[0] == 0:
        raise ValueError("Cannot train the teacher on an empty corpus")

    section = cfg.teacher
    steps = section.steps if steps is None else steps
    torch.manual_seed(derive_seed(cfg.run.seed, STREAM_TEACHER, 0))
    teacher = build_backbone(tokenizer, cfg.backbone, role="teacher")
    teacher.train()
    optimizer = torch.optim.AdamW(teacher.parameters(), lr=section.lr,
                                  weight_decay=section.weight_decay)
    batch_seed = derive_seed(cfg.run.seed, STREAM_TEACHER, 1)
    n = tokens[0].shape[0]

    history = []
    for step in tqdm(range(1, steps + 1), desc="Training teacher", disable=not progress):
        idx = torch.from_numpy(batch_indices(n, section.batch_size, batch_seed, step))
        batch = [t[idx] for t in tokens]
        start = time.perf_counter()

        loss = next_scale_loss(teacher.teacher_forward(batch), batch)
        check_finite(step, ce=loss.item())

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        record = {"step": step, "ce": loss.item(),
                  "wall_ms": (time.perf_counter() - start) * 1000.0}
        history.append(record)
        log_step(step, steps, cfg.run.log_every, record)

    freeze(teacher)
    final_ce = teacher_cross_entropy(teacher, tokens)
    logger.info("Teacher cross-entropy %.4f nats (uniform baseline ln V = %.4f)",
                final_ce, math.log(teacher.vocab))
    ckpt = teacher_checkpoint(teacher, cfg, steps, tokenizer_id,
                              {"train_ce": final_ce, "uniform_ce": math.log(teacher.vocab)})
    return TrainingResult(teacher, ckpt, history)
