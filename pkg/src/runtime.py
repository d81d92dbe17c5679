"""Inference paths: one-step restoration, scale-by-scale teacher sampling, zero-shot completion."""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch

from .constants import DEFAULT_TEMPERATURE, GREEDY_TEMPERATURE
from .distill import StudentModel, check_compatible, pre_restore
from .tokenizer import PyramidTokenizer
from .transformer import ScalewiseTransformer
from .utils import torch_generator

logger = logging.getLogger(__name__)


@dataclass
class RestoreReport:
    forward_pass_count: int
    wall_ms: float
    transformer_ms: float
    tokenizer_ms: float
    schedule: str
    checkpoint_ids: Dict[str, str] = field(default_factory=dict)
    output_paths: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "forward_pass_count": self.forward_pass_count,
            "wall_ms": self.wall_ms,
            "transformer_ms": self.transformer_ms,
            "tokenizer_ms": self.tokenizer_ms,
            "schedule": self.schedule,
            **{f"{kind}_id": value for kind, value in self.checkpoint_ids.items()},
        }


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000.0


@torch.no_grad()
def restore_one_step(lq_images: torch.Tensor, student: StudentModel, tokenizer: PyramidTokenizer,
                     condition: Optional[torch.Tensor] = None,
                     checkpoint_ids: Optional[Dict[str, str]] = None) -> Tuple[torch.Tensor, RestoreReport]:
    """
    Pre-restore, tokenize, one student pass, argmax, detokenize.

    Args:
        lq_images: (B, C, H, W) degraded images in [0, 1], at the HQ size
        student: Trained student (its pre-restorer flag is honoured)
        tokenizer: Tokenizer the student was distilled against

    Returns:
        (restored images, report with exactly one backbone pass)
    """
    check_compatible(tokenizer, student.backbone)
    start = time.perf_counter()
    before = student.backbone.thread_passes()

    restored_in = pre_restore(lq_images, student.prerestorer)

    tok_start = time.perf_counter()
    lq_tokens = tokenizer.tokenize(restored_in)
    tokenizer_ms = _ms(tok_start)

    pass_start = time.perf_counter()
    logits = student(lq_tokens, condition)
    tokens = [l.argmax(dim=-1) for l in logits]
    transformer_ms = _ms(pass_start)

    tok_start = time.perf_counter()
    images = tokenizer.detokenize(tokens).clamp(0.0, 1.0)
    tokenizer_ms += _ms(tok_start)

    report = RestoreReport(
        forward_pass_count=student.backbone.thread_passes() - before,
        wall_ms=_ms(start),
        transformer_ms=transformer_ms,
        tokenizer_ms=tokenizer_ms,
        schedule=str(tokenizer.schedule),
        checkpoint_ids=dict(checkpoint_ids or {}),
    )
    return images, report


def sample_from_logits(logits: torch.Tensor, temperature: float,
                       generator: Optional[torch.Generator] = None, top_k: int = 0) -> torch.Tensor:
    """
    Draw one token per position from softmax(logits / temperature).

    Temperatures at or below GREEDY_TEMPERATURE decode by argmax.

    Args:
        logits: (B, h, w, V) unnormalized log-probabilities
        temperature: Positive sampling temperature
        top_k: Keep only the k most likely tokens (0 keeps all)
    """
    if not temperature > 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    if temperature <= GREEDY_TEMPERATURE:
        return logits.argmax(dim=-1)

    V = logits.shape[-1]
    scaled = logits.reshape(-1, V).float() / temperature
    if 0 < top_k < V:
        threshold = torch.topk(scaled, top_k, dim=-1).values[:, -1:]
        scaled = scaled.masked_fill(scaled < threshold, float("-inf"))
    probs = torch.softmax(scaled, dim=-1)
    draws = torch.multinomial(probs, 1, generator=generator)
    return draws.view(logits.shape[:-1])


@torch.no_grad()
def complete_pyramid(teacher: ScalewiseTransformer, prefix: Sequence[torch.Tensor], batch_size: int,
                     temperature: float, generator: torch.Generator,
                     condition: Optional[torch.Tensor] = None, top_k: int = 0) -> List[torch.Tensor]:
    """Sample the scales after the given prefix, one teacher pass per scale."""
    tokens = list(prefix)
    for k in range(len(tokens) + 1, len(teacher.schedule) + 1):
        logits = teacher.teacher_forward(tokens, condition, num_scales=k, batch_size=batch_size)
        tokens.append(sample_from_logits(logits[k - 1], temperature, generator, top_k))
    return tokens


@torch.no_grad()
def sample_teacher(teacher: ScalewiseTransformer, n: int, temperature: float = DEFAULT_TEMPERATURE,
                   seed: int = 0, condition: Optional[torch.Tensor] = None,
                   top_k: int = 0) -> Tuple[List[torch.Tensor], RestoreReport]:
    """
    Autoregressive sampling of n token pyramids, K teacher passes.

    Raises:
        ValueError: On a non-positive temperature or n < 1
    """
    if not temperature > 0:
        raise ValueError(f"Temperature must be positive, got {temperature}")
    if n < 1:
        raise ValueError(f"Number of samples must be >= 1, got {n}")

    start = time.perf_counter()
    before = teacher.thread_passes()
    tokens = complete_pyramid(teacher, [], n, temperature, torch_generator(seed), condition, top_k)
    elapsed = _ms(start)
    report = RestoreReport(
        forward_pass_count=teacher.thread_passes() - before,
        wall_ms=elapsed,
        transformer_ms=elapsed,
        tokenizer_ms=0.0,
        schedule=str(teacher.schedule),
    )
    return tokens, report


@torch.no_grad()
def zero_shot_upsample(lq_images: torch.Tensor, s: int, teacher: ScalewiseTransformer,
                       tokenizer: PyramidTokenizer, seed: int = 0,
                       temperature: float = DEFAULT_TEMPERATURE,
                       top_k: int = 0) -> Tuple[torch.Tensor, List[torch.Tensor], RestoreReport]:
    """
    Keep the LQ pyramid's scales 1..s and let the teacher sample the rest.

    Raises:
        ValueError: If s is not in [1, K)
    """
    K = len(teacher.schedule)
    if not (1 <= s < K):
        raise ValueError(f"Zero-shot scale s must satisfy 1 <= s < {K}, got {s}")
    check_compatible(tokenizer, teacher)

    start = time.perf_counter()
    lq_tokens = tokenizer.tokenize(lq_images)
    tokenizer_ms = _ms(start)

    before = teacher.thread_passes()
    pass_start = time.perf_counter()
    tokens = complete_pyramid(teacher, lq_tokens[:s], lq_images.shape[0], temperature,
                              torch_generator(seed), top_k=top_k)
    transformer_ms = _ms(pass_start)

    tok_start = time.perf_counter()
    images = tokenizer.detokenize(tokens).clamp(0.0, 1.0)
    tokenizer_ms += _ms(tok_start)

    report = RestoreReport(
        forward_pass_count=teacher.thread_passes() - before,
        wall_ms=_ms(start),
        transformer_ms=transformer_ms,
        tokenizer_ms=tokenizer_ms,
        schedule=str(tokenizer.schedule),
    )
    return images, tokens, report
