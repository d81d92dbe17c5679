"""Scale-wise transformer shared by the next-scale teacher and the one-step student."""

import logging
import math
import threading
from enum import Enum
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from .checkpoint import Checkpoint
from .constants import FFN_MULTIPLIER, INIT_STD
from .tokenizer import ScaleSchedule, lookup, upsample_to
from .validation import validate_backbone_dims, validate_token_pyramid

logger = logging.getLogger(__name__)


class MaskMode(str, Enum):
    BLOCK_CAUSAL = "block_causal"
    FULL = "full"


@lru_cache(maxsize=64)
def _cached_mask(scales: Tuple[Tuple[int, int], ...], mode: str) -> torch.Tensor:
    areas = torch.tensor([h * w for h, w in scales])
    scale_ids = torch.repeat_interleave(torch.arange(len(scales)), areas)
    if mode == MaskMode.FULL.value:
        return torch.ones(len(scale_ids), len(scale_ids), dtype=torch.bool)
    # row = query, column = key
    return scale_ids[None, :] <= scale_ids[:, None]


def build_mask(schedule: ScaleSchedule, mode: MaskMode) -> torch.Tensor:
    """
    T x T boolean allow-matrix over the concatenated scale sequence.

    BLOCK_CAUSAL allows (i, j) iff scale(j) <= scale(i); FULL allows all.
    """
    return _cached_mask(tuple(schedule.scales), MaskMode(mode).value).clone()


class SelfAttention(nn.Module):
    """Multi-head self-attention with an explicit boolean allow-mask."""

    def __init__(self, model_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = model_dim // heads
        self.query = nn.Linear(model_dim, model_dim)
        self.key = nn.Linear(model_dim, model_dim)
        self.value = nn.Linear(model_dim, model_dim)
        self.output = nn.Linear(model_dim, model_dim)

    def forward(self, x: torch.Tensor, allow: torch.Tensor) -> torch.Tensor:
        B, T, D = x.shape
        q = self.query(x).view(B, T, self.heads, self.head_dim).transpose(1, 2)
        k = self.key(x).view(B, T, self.heads, self.head_dim).transpose(1, 2)
        v = self.value(x).view(B, T, self.heads, self.head_dim).transpose(1, 2)

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allow, float("-inf"))
        weights = torch.softmax(scores, dim=-1)

        out = (weights @ v).transpose(1, 2).reshape(B, T, D)
        return self.output(out)


class Block(nn.Module):
    """Pre-norm residual block: attention then a GELU feed-forward."""

    def __init__(self, model_dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(model_dim)
        self.attention = SelfAttention(model_dim, heads)
        self.norm2 = nn.LayerNorm(model_dim)
        self.ffn = nn.Sequential(
            nn.Linear(model_dim, FFN_MULTIPLIER * model_dim),
            nn.GELU(),
            nn.Linear(FFN_MULTIPLIER * model_dim, model_dim),
        )

    def forward(self, x: torch.Tensor, allow: torch.Tensor) -> torch.Tensor:
        x = x + self.attention(self.norm1(x), allow)
        x = x + self.ffn(self.norm2(x))
        return x


class ScalewiseTransformer(nn.Module):
    """
    Transformer over the flattened token pyramid.

    The role flag picks the input path and the default mask: the teacher sees
    the cumulative reconstruction of coarser scales under a block-causal
    mask, the student sees the LQ token embeddings under full attention.
    Logits are returned unnormalized, one (B, h_k, w_k, V) tensor per scale.
    """

    def __init__(self, schedule: ScaleSchedule, codebook: torch.Tensor, layers: int,
                 model_dim: int, heads: int, conditioning_dim: int = 0,
                 role: str = "teacher", mask_mode: Optional[MaskMode] = None):
        super().__init__()
        is_valid, error = validate_backbone_dims(layers, model_dim, heads)
        if not is_valid:
            raise ValueError(error)
        if role not in ("teacher", "student"):
            raise ValueError(f"Role must be 'teacher' or 'student', got {role}")

        self.schedule = schedule
        self.vocab, self.embed_dim = codebook.shape
        self.layers = layers
        self.model_dim = model_dim
        self.heads = heads
        self.conditioning_dim = conditioning_dim
        self.role = role
        default_mode = MaskMode.BLOCK_CAUSAL if role == "teacher" else MaskMode.FULL
        self.mask_mode = MaskMode(mask_mode) if mask_mode is not None else default_mode
        self.forward_passes = 0
        self._pass_lock = threading.Lock()
        self._thread_state = threading.local()

        self.register_buffer("codebook", codebook.detach().clone())

        self.input_proj = nn.Linear(self.embed_dim, model_dim)
        self.scale_embed = nn.Embedding(len(schedule), model_dim)
        self.pos_embed = nn.ParameterList(
            [nn.Parameter(torch.randn(h * w, model_dim) * INIT_STD) for h, w in schedule.scales]
        )
        self.start = nn.Parameter(torch.randn(model_dim) * INIT_STD)
        self.condition = nn.Linear(conditioning_dim, model_dim) if conditioning_dim > 0 else None

        self.blocks = nn.ModuleList([Block(model_dim, heads) for _ in range(layers)])
        self.head_norm = nn.LayerNorm(model_dim)
        self.head = nn.Linear(model_dim, self.vocab)

        nn.init.normal_(self.scale_embed.weight, std=INIT_STD)

    def meta(self) -> dict:
        return {
            "schedule": str(self.schedule),
            "vocab": self.vocab,
            "embed_dim": self.embed_dim,
            "layers": self.layers,
            "model_dim": self.model_dim,
            "heads": self.heads,
            "conditioning_dim": self.conditioning_dim,
            "role": self.role,
            "mask_mode": self.mask_mode.value,
        }

    # ------------------------------------------------------------------
    # Input embeddings
    # ------------------------------------------------------------------

    def _add_position(self, grid: torch.Tensor, k: int) -> torch.Tensor:
        """(B, model_dim, h, w) or (B, h*w, model_dim) -> (B, h*w, model_dim) plus embeddings."""
        if grid.dim() == 4:
            grid = grid.flatten(2).transpose(1, 2)
        return grid + self.pos_embed[k] + self.scale_embed.weight[k]

    def _project(self, features: torch.Tensor) -> torch.Tensor:
        # features: (B, d, h, w)
        return self.input_proj(features.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)

    def _condition_term(self, condition: Optional[torch.Tensor], batch: int) -> Optional[torch.Tensor]:
        if condition is None:
            return None
        if self.condition is None:
            raise ValueError("This backbone was built without a conditioning vector")
        if condition.shape != (batch, self.conditioning_dim):
            raise ValueError(
                f"Condition must have shape ({batch}, {self.conditioning_dim}), "
                f"got {tuple(condition.shape)}"
            )
        return self.condition(condition)[:, None, :]

    def embed_teacher(self, tokens: Sequence[torch.Tensor], num_scales: int,
                      condition: Optional[torch.Tensor] = None,
                      batch_size: Optional[int] = None) -> torch.Tensor:
        """
        Teacher-forced inputs for scales 1..num_scales.

        Only tokens of scales 1..num_scales-1 are read; batch_size is needed
        when there are none.
        """
        if len(tokens) and num_scales > 1:
            batch = tokens[0].shape[0]
        elif batch_size is not None:
            batch = batch_size
        elif condition is not None:
            batch = condition.shape[0]
        else:
            batch = tokens[0].shape[0] if len(tokens) else 1
        h1, w1 = self.schedule.scales[0]
        first = self.start.expand(batch, h1 * w1, self.model_dim)
        cond = self._condition_term(condition, batch)
        if cond is not None:
            first = first + cond
        pieces = [self._add_position(first, 0)]

        embeddings = [lookup(t, self.codebook) for t in tokens[:num_scales - 1]]
        for k in range(1, num_scales):
            size = self.schedule.scales[k]
            context = None
            for emb in embeddings[:k]:
                up = upsample_to(emb, size)
                context = up if context is None else context + up
            pieces.append(self._add_position(self._project(context), k))

        return torch.cat(pieces, dim=1)

    def embed_student(self, tokens: Sequence[torch.Tensor],
                      condition: Optional[torch.Tensor] = None) -> torch.Tensor:
        pieces = []
        for k, token_map in enumerate(tokens):
            pieces.append(self._add_position(self._project(lookup(token_map, self.codebook)), k))
        x = torch.cat(pieces, dim=1)

        cond = self._condition_term(condition, x.shape[0])
        if cond is not None:
            first = self.schedule.areas[0]
            x = torch.cat([x[:, :first] + cond, x[:, first:]], dim=1)
        return x

    # ------------------------------------------------------------------
    # Backbone
    # ------------------------------------------------------------------

    def run_backbone(self, x: torch.Tensor, schedule: ScaleSchedule,
                     mode: Optional[MaskMode] = None) -> List[torch.Tensor]:
        """One backbone evaluation; returns per-scale (B, h_k, w_k, V) logits."""
        with self._pass_lock:
            self.forward_passes += 1
        self._thread_state.passes = self.thread_passes() + 1
        allow = build_mask(schedule, mode or self.mask_mode).to(x.device)
        for block in self.blocks:
            x = block(x, allow)
        logits = self.head(self.head_norm(x))

        out, start = [], 0
        for h, w in schedule.scales:
            out.append(logits[:, start:start + h * w].reshape(-1, h, w, self.vocab))
            start += h * w
        return out

    def thread_passes(self) -> int:
        """Backbone evaluations run so far by the calling thread."""
        return getattr(self._thread_state, "passes", 0)

    def _check_tokens(self, tokens: Sequence[torch.Tensor], count: int) -> None:
        is_valid, error = validate_token_pyramid(
            list(tokens[:count]), self.schedule.scales[:count], self.vocab
        )
        if not is_valid:
            raise ValueError(f"Schedule mismatch: {error}")

    def teacher_forward(self, tokens: Sequence[torch.Tensor],
                        condition: Optional[torch.Tensor] = None,
                        num_scales: Optional[int] = None,
                        batch_size: Optional[int] = None) -> List[torch.Tensor]:
        """
        Teacher-forced pass. Logits at scale k depend only on tokens at scales < k.

        Args:
            tokens: HQ token pyramid (at least num_scales - 1 maps)
            condition: Optional (B, conditioning_dim) vector
            num_scales: Evaluate only the first num_scales scales (default all)
            batch_size: Batch size when no tokens are given yet
        """
        num_scales = len(self.schedule) if num_scales is None else num_scales
        if not (1 <= num_scales <= len(self.schedule)):
            raise ValueError(f"num_scales must be in [1, {len(self.schedule)}], got {num_scales}")
        self._check_tokens(tokens, num_scales - 1)
        x = self.embed_teacher(tokens, num_scales, condition, batch_size)
        return self.run_backbone(x, self.schedule.prefix(num_scales), MaskMode.BLOCK_CAUSAL)

    def student_forward(self, tokens: Sequence[torch.Tensor],
                        condition: Optional[torch.Tensor] = None) -> List[torch.Tensor]:
        """Single pass from LQ tokens to logits at every position of every scale."""
        self._check_tokens(tokens, len(self.schedule))
        if len(tokens) != len(self.schedule):
            raise ValueError(
                f"Schedule mismatch: got {len(tokens)} maps, expected {len(self.schedule)}"
            )
        x = self.embed_student(tokens, condition)
        return self.run_backbone(x, self.schedule, self.mask_mode)

    def forward(self, tokens: Sequence[torch.Tensor],
                condition: Optional[torch.Tensor] = None) -> List[torch.Tensor]:
        if self.role == "teacher":
            return self.teacher_forward(tokens, condition)
        return self.student_forward(tokens, condition)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, prefix: str = "") -> "ScalewiseTransformer":
        meta = ckpt.meta
        model = cls(
            schedule=ScaleSchedule.from_string(meta["schedule"]),
            codebook=torch.zeros(meta["vocab"], meta["embed_dim"]),
            layers=meta["layers"],
            model_dim=meta["model_dim"],
            heads=meta["heads"],
            conditioning_dim=meta["conditioning_dim"],
            role=meta["role"],
            mask_mode=MaskMode(meta["mask_mode"]),
        )
        model.load_state_dict(ckpt.state_dict(prefix))
        model.eval()
        return model


def build_backbone(tokenizer, section, role: str = "teacher",
                   mask_mode: Optional[MaskMode] = None) -> ScalewiseTransformer:
    """Backbone sized by a [backbone] config section around a tokenizer's codebook."""
    return ScalewiseTransformer(
        schedule=tokenizer.schedule,
        codebook=tokenizer.codebook,
        layers=section.layers,
        model_dim=section.model_dim,
        heads=section.heads,
        conditioning_dim=section.conditioning_dim,
        role=role,
        mask_mode=mask_mode,
    )


def as_student(teacher: ScalewiseTransformer,
               mask_mode: MaskMode = MaskMode.FULL) -> ScalewiseTransformer:
    """Copy of the teacher switched to the student input path, weights shared by value."""
    student = ScalewiseTransformer(
        schedule=teacher.schedule,
        codebook=teacher.codebook,
        layers=teacher.layers,
        model_dim=teacher.model_dim,
        heads=teacher.heads,
        conditioning_dim=teacher.conditioning_dim,
        role="student",
        mask_mode=mask_mode,
    )
    student.load_state_dict(teacher.state_dict())
    return student
