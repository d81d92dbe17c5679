"""Token-level distribution matching of the frozen teacher into a one-step student."""

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from .adapters import AdapterConfig, wrap_with_adapters, trainable_fraction
from .checkpoint import Checkpoint, CheckpointError
from .constants import RESTORER_CHANNELS, STREAM_DISTILL
from .runconfig import RunConfig, config_hash
from .tokenizer import PyramidTokenizer, ScaleSchedule, accumulate_embeddings
from .training import (
    NonFiniteLossError, TrainingResult, batch_indices, check_finite, freeze, log_step,
)
from .transformer import MaskMode, ScalewiseTransformer, as_student
from .utils import derive_seed, parameter_checksum
from .validation import validate_loss_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda_kl: float = 0.1
    lambda_perc: float = 0.25
    lambda_mse: float = 0.5

    def __post_init__(self):
        is_valid, error = validate_loss_weights(self.lambda_kl, self.lambda_perc, self.lambda_mse)
        if not is_valid:
            raise ValueError(error)

    @classmethod
    def from_config(cls, section) -> "LossWeights":
        return cls(section.lambda_kl, section.lambda_perc, section.lambda_mse)


# ----------------------------------------------------------------------------
# Losses
# ----------------------------------------------------------------------------

def _check_pyramids(a: Sequence[torch.Tensor], b: Sequence[torch.Tensor]) -> None:
    if len(a) != len(b):
        raise ValueError(f"Shape mismatch: {len(a)} scales vs {len(b)} scales")
    for k, (x, y) in enumerate(zip(a, b)):
        if x.shape != y.shape:
            raise ValueError(
                f"Shape mismatch at scale {k + 1}: {tuple(x.shape)} vs {tuple(y.shape)}"
            )


def kl_pyramid_loss(teacher: Sequence[torch.Tensor], student: Sequence[torch.Tensor]) -> torch.Tensor:
    """
    Sum over scales of the mean per-position KL(softmax(teacher) || softmax(student)), in nats.

    Teacher logits are detached.
    """
    _check_pyramids(teacher, student)
    total = None
    for t_logits, s_logits in zip(teacher, student):
        log_p = F.log_softmax(t_logits.detach(), dim=-1)
        log_q = F.log_softmax(s_logits, dim=-1)
        per_position = F.kl_div(log_q, log_p, reduction="none", log_target=True).sum(dim=-1)
        term = per_position.mean()
        total = term if total is None else total + term
    return total


def soft_decode(student: Sequence[torch.Tensor], tokenizer: PyramidTokenizer) -> torch.Tensor:
    """
    Differentiable image from per-scale logits.

    Each position contributes its softmax-weighted codebook embedding; the maps
    are accumulated along the dequantizer's interpolation path and decoded.
    """
    schedule = tokenizer.schedule
    if len(student) != len(schedule):
        raise ValueError(f"Shape mismatch: {len(student)} scales, schedule has {len(schedule)}")

    embeddings = []
    for k, (logits, (h, w)) in enumerate(zip(student, schedule.scales)):
        if logits.dim() != 4 or tuple(logits.shape[1:]) != (h, w, tokenizer.vocab):
            raise ValueError(
                f"Shape mismatch at scale {k + 1}: {tuple(logits.shape)}, "
                f"expected (B, {h}, {w}, {tokenizer.vocab})"
            )
        probs = torch.softmax(logits, dim=-1)
        embeddings.append((probs @ tokenizer.codebook).permute(0, 3, 1, 2))
    return tokenizer.decode_image(accumulate_embeddings(embeddings, schedule.final))


def image_losses(decoded: torch.Tensor, gt_images: torch.Tensor,
                 tokenizer: PyramidTokenizer) -> Tuple[torch.Tensor, torch.Tensor]:
    """(pixel MSE, frozen-encoder feature MSE) between two image batches."""
    if decoded.shape != gt_images.shape:
        raise ValueError(
            f"Shape mismatch: decoded {tuple(decoded.shape)} vs target {tuple(gt_images.shape)}"
        )
    mse = F.mse_loss(decoded, gt_images)
    with torch.no_grad():
        target_features = tokenizer.encoder(gt_images)
    perc = F.mse_loss(tokenizer.encoder(decoded), target_features)
    return mse, perc


def consistency_losses(student: Sequence[torch.Tensor], gt_images: torch.Tensor,
                       tokenizer: PyramidTokenizer) -> Tuple[torch.Tensor, torch.Tensor]:
    return image_losses(soft_decode(student, tokenizer), gt_images, tokenizer)


def total_loss(kl: torch.Tensor, perc: torch.Tensor, mse: torch.Tensor,
               weights: LossWeights) -> torch.Tensor:
    """
    lambda_kl * kl + lambda_perc * perc + lambda_mse * mse.

    Zero-weight terms are left out of the graph entirely.

    Raises:
        NonFiniteLossError: If any term is NaN or infinite
    """
    terms = [(weights.lambda_kl, kl, "kl"), (weights.lambda_perc, perc, "perc"),
             (weights.lambda_mse, mse, "mse")]
    bad = [f"{name}={float(value)}" for _, value, name in terms
           if not torch.isfinite(torch.as_tensor(value)).all()]
    if bad:
        raise NonFiniteLossError(f"Non-finite loss term(s): {', '.join(bad)}")

    total = None
    for weight, value, _ in terms:
        if weight == 0:
            continue
        term = weight * value
        total = term if total is None else total + term
    return total


# ----------------------------------------------------------------------------
# Pre-restorer and student container
# ----------------------------------------------------------------------------

class PreRestorer(nn.Module):
    """Small residual conv net for a coarse first pass on LQ images."""

    def __init__(self, channels: int = RESTORER_CHANNELS, image_channels: int = 3):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(image_channels, channels, 3, padding=1), nn.GELU(),
            nn.Conv2d(channels, channels, 3, padding=1), nn.GELU(),
            nn.Conv2d(channels, image_channels, 3, padding=1),
        )
        nn.init.zeros_(self.body[-1].weight)
        nn.init.zeros_(self.body[-1].bias)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return torch.clamp(images + self.body(images), 0.0, 1.0)


def pre_restore(lq_images: torch.Tensor, restorer: Optional[PreRestorer]) -> torch.Tensor:
    """Coarse restoration; identity when the restorer is disabled."""
    if restorer is None:
        return lq_images
    return restorer(lq_images)


class StudentModel(nn.Module):
    def __init__(self, backbone: ScalewiseTransformer, restorer: Optional[PreRestorer] = None):
        super().__init__()
        self.backbone = backbone
        self.prerestorer = restorer

    @property
    def use_prerestorer(self) -> bool:
        return self.prerestorer is not None

    def forward(self, lq_tokens: Sequence[torch.Tensor],
                condition: Optional[torch.Tensor] = None) -> List[torch.Tensor]:
        return self.backbone.student_forward(lq_tokens, condition)


def build_student(teacher: ScalewiseTransformer, cfg: RunConfig) -> StudentModel:
    backbone = as_student(teacher, MaskMode(cfg.distill.mask_mode))
    wrap_with_adapters(backbone, AdapterConfig.from_config(cfg.adapter))
    restorer = PreRestorer(cfg.distill.restorer_channels) if cfg.distill.use_prerestorer else None
    return StudentModel(backbone, restorer)


def student_checkpoint(student: StudentModel, cfg: RunConfig, step: int,
                       teacher_id: str = "", tokenizer_id: str = "") -> Checkpoint:
    adapter = student.backbone.adapter_config
    meta = {
        **student.backbone.meta(),
        "adapter_rank": adapter.rank,
        "adapter_alpha": adapter.alpha,
        "adapter_targets": list(adapter.targets),
        "use_prerestorer": student.use_prerestorer,
        "restorer_channels": cfg.distill.restorer_channels,
        "trainable_fraction": trainable_fraction(student.backbone),
        "teacher_id": teacher_id,
        "tokenizer_id": tokenizer_id,
        "config_hash": config_hash(cfg),
    }
    return Checkpoint.from_module("student", student, cfg.to_dict(), step, None, meta)


def load_student(ckpt: Checkpoint) -> StudentModel:
    meta = ckpt.meta
    backbone = ScalewiseTransformer(
        schedule=ScaleSchedule.from_string(meta["schedule"]),
        codebook=torch.zeros(meta["vocab"], meta["embed_dim"]),
        layers=meta["layers"],
        model_dim=meta["model_dim"],
        heads=meta["heads"],
        conditioning_dim=meta["conditioning_dim"],
        role="student",
        mask_mode=MaskMode(meta["mask_mode"]),
    )
    wrap_with_adapters(backbone, AdapterConfig(
        meta["adapter_rank"], meta["adapter_alpha"], tuple(meta["adapter_targets"])
    ))
    restorer = PreRestorer(meta["restorer_channels"]) if meta["use_prerestorer"] else None
    student = StudentModel(backbone, restorer)
    student.load_state_dict(ckpt.state_dict())
    return student.eval()


def check_compatible(tokenizer: PyramidTokenizer, model: ScalewiseTransformer) -> None:
    """Schedule, vocabulary and codebook of a backbone must match its tokenizer."""
    if str(model.schedule) != str(tokenizer.schedule):
        raise CheckpointError(
            f"Schedule mismatch: backbone uses {model.schedule}, tokenizer uses {tokenizer.schedule}"
        )
    if model.vocab != tokenizer.vocab or model.embed_dim != tokenizer.embed_dim:
        raise CheckpointError(
            f"Codebook mismatch: backbone has {model.vocab}x{model.embed_dim}, "
            f"tokenizer has {tokenizer.vocab}x{tokenizer.embed_dim}"
        )
    if not torch.equal(model.codebook, tokenizer.codebook):
        raise CheckpointError("Backbone was trained against a different tokenizer codebook")


# ----------------------------------------------------------------------------
# Training loop
# ----------------------------------------------------------------------------

def distill(teacher: ScalewiseTransformer, tokenizer: PyramidTokenizer,
            hq_images: torch.Tensor, lq_images: torch.Tensor, cfg: RunConfig,
            steps: Optional[int] = None, teacher_id: str = "", tokenizer_id: str = "",
            progress: bool = True) -> TrainingResult:
    """
    Distill the frozen teacher into an adapter-equipped one-step student.

    Only adapter factors, the condition projection and the pre-restorer are
    updated. Frozen weights are checksummed before and after.

    Args:
        teacher: Trained teacher backbone
        tokenizer: Tokenizer the teacher was trained against
        hq_images: (N, C, H, W) clean targets
        lq_images: (N, C, H, W) degraded inputs, resized to the HQ size
        cfg: Run configuration ([adapter], [loss] and [distill] sections)
        steps: Override for cfg.distill.steps

    Raises:
        ValueError: On an empty or misaligned paired dataset
        CheckpointError: If teacher and tokenizer do not belong together
        NonFiniteLossError: If the loss diverges
    """
    if hq_images.shape[0] == 0:
        raise ValueError("Cannot distill on an empty paired dataset")
    if hq_images.shape != lq_images.shape:
        raise ValueError(
            f"Paired images differ in shape: HQ {tuple(hq_images.shape)}, "
            f"LQ {tuple(lq_images.shape)}"
        )
    check_compatible(tokenizer, teacher)

    section = cfg.distill
    steps = section.steps if steps is None else steps
    weights = LossWeights.from_config(cfg.loss)

    freeze(teacher)
    freeze(tokenizer)
    torch.manual_seed(derive_seed(cfg.run.seed, STREAM_DISTILL, 0))
    student = build_student(teacher, cfg)
    student.train()

    teacher_sum = parameter_checksum(teacher)
    frozen_sum = parameter_checksum(student, frozen_only=True)

    trainable = [p for p in student.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(trainable, lr=section.lr, weight_decay=section.weight_decay)
    batch_seed = derive_seed(cfg.run.seed, STREAM_DISTILL, 1)

    history = []
    for step in tqdm(range(1, steps + 1), desc="Distilling", disable=not progress):
        idx = torch.from_numpy(batch_indices(hq_images.shape[0], section.batch_size, batch_seed, step))
        hq, lq = hq_images[idx], lq_images[idx]
        start = time.perf_counter()

        with torch.no_grad():
            hq_tokens = tokenizer.tokenize(hq)
            teacher_logits = teacher.teacher_forward(hq_tokens)

        restored = pre_restore(lq, student.prerestorer)
        lq_tokens = tokenizer.tokenize(restored.detach())
        student_logits = student(lq_tokens)

        kl = kl_pyramid_loss(teacher_logits, student_logits)
        mse, perc = consistency_losses(student_logits, hq, tokenizer)
        check_finite(step, kl=kl.item(), perc=perc.item(), mse=mse.item())
        total = total_loss(kl, perc, mse, weights)

        objective = total
        restorer_loss = None
        if student.use_prerestorer:
            restorer_loss = F.mse_loss(restored, hq)
            objective = objective + section.restorer_weight * restorer_loss

        optimizer.zero_grad()
        objective.backward()
        optimizer.step()

        record = {
            "step": step,
            "kl": kl.item(),
            "perc": perc.item(),
            "mse": mse.item(),
            "total": total.item(),
            "restorer": restorer_loss.item() if restorer_loss is not None else 0.0,
            "wall_ms": (time.perf_counter() - start) * 1000.0,
        }
        history.append(record)
        log_step(step, steps, cfg.run.log_every, record)

    if parameter_checksum(teacher) != teacher_sum:
        raise RuntimeError("Teacher parameters changed during distillation")
    if parameter_checksum(student, frozen_only=True) != frozen_sum:
        raise RuntimeError("Frozen student parameters changed during distillation")

    student.eval()
    logger.info("Distillation finished after %d steps; %.2f%% of backbone parameters trainable",
                steps, 100.0 * trainable_fraction(student.backbone))
    ckpt = student_checkpoint(student, cfg, steps, teacher_id, tokenizer_id)
    return TrainingResult(student, ckpt, history)
