"""Speed accounting and the ablation runner."""

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

from config.settings import ARM_INFO
from .adapters import trainable_fraction
from .constants import MIN_BENCH_IMAGES, STREAM_BENCH, STREAM_ZERO_SHOT
from .distill import StudentModel, distill
from .metrics import evaluate_images
from .runconfig import RunConfig, config_diff, config_hash, override
from .runtime import restore_one_step, sample_teacher, zero_shot_upsample
from .tokenizer import PyramidTokenizer
from .transformer import ScalewiseTransformer
from .utils import derive_seed, tensor_to_images

logger = logging.getLogger(__name__)


@dataclass
class SpeedReport:
    images: int
    num_scales: int
    student_passes: int
    teacher_passes: int
    student_ms: float
    teacher_ms: float
    tokenizer_ms: float
    trainable_fraction: float
    config_hash: str = ""

    @property
    def speedup(self) -> float:
        return self.teacher_ms / self.student_ms if self.student_ms > 0 else float("inf")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "images": self.images,
            "num_scales": self.num_scales,
            "student_passes": self.student_passes,
            "teacher_passes": self.teacher_passes,
            "student_ms": self.student_ms,
            "teacher_ms": self.teacher_ms,
            "speedup": self.speedup,
            "tokenizer_ms": self.tokenizer_ms,
            "trainable_fraction": self.trainable_fraction,
            "config_hash": self.config_hash,
        }])


def benchmark_speed(student: StudentModel, teacher: ScalewiseTransformer, tokenizer: PyramidTokenizer,
                    lq_images: torch.Tensor, seed: int = 0, warmup: int = 2,
                    temperature: float = 1.0, cfg_hash: str = "") -> SpeedReport:
    """
    Median per-image transformer time of one-step restoration vs. teacher sampling.

    Both paths run single-threaded on the same images. Tokenizer encode and
    decode are excluded from the comparison and reported on their own.

    Args:
        lq_images: (N, C, H, W) LQ inputs, N >= MIN_BENCH_IMAGES
        warmup: Untimed runs of each path before measuring

    Raises:
        ValueError: If fewer than MIN_BENCH_IMAGES images are given
    """
    n = lq_images.shape[0]
    if n < MIN_BENCH_IMAGES:
        raise ValueError(f"Speed benchmark needs at least {MIN_BENCH_IMAGES} images, got {n}")

    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        for i in range(warmup):
            restore_one_step(lq_images[i % n:i % n + 1], student, tokenizer)
            sample_teacher(teacher, 1, temperature, derive_seed(seed, STREAM_BENCH, i))

        student_ms, teacher_ms, tokenizer_ms = [], [], []
        student_passes, teacher_passes = set(), set()
        for i in range(n):
            _, report = restore_one_step(lq_images[i:i + 1], student, tokenizer)
            student_ms.append(report.transformer_ms)
            tokenizer_ms.append(report.tokenizer_ms)
            student_passes.add(report.forward_pass_count)

            _, report = sample_teacher(teacher, 1, temperature,
                                       derive_seed(seed, STREAM_BENCH, warmup + i))
            teacher_ms.append(report.transformer_ms)
            teacher_passes.add(report.forward_pass_count)
    finally:
        torch.set_num_threads(threads)

    if len(student_passes) != 1 or len(teacher_passes) != 1:
        raise RuntimeError(
            f"Pass counts varied between runs: student {sorted(student_passes)}, "
            f"teacher {sorted(teacher_passes)}"
        )

    result = SpeedReport(
        images=n,
        num_scales=len(tokenizer.schedule),
        student_passes=student_passes.pop(),
        teacher_passes=teacher_passes.pop(),
        student_ms=float(np.median(student_ms)),
        teacher_ms=float(np.median(teacher_ms)),
        tokenizer_ms=float(np.median(tokenizer_ms)),
        trainable_fraction=trainable_fraction(student.backbone),
        config_hash=cfg_hash,
    )
    logger.info("Student %.2f ms (%d pass) vs teacher %.2f ms (%d passes): %.1fx speedup",
                result.student_ms, result.student_passes, result.teacher_ms,
                result.teacher_passes, result.speedup)
    return result


# ----------------------------------------------------------------------------
# Ablations
# ----------------------------------------------------------------------------

def parse_arms(text: str) -> List[str]:
    arms = [arm.strip() for arm in text.split(",") if arm.strip()]
    if not arms:
        raise ValueError("No ablation arms given")
    unknown = [arm for arm in arms if arm not in ARM_INFO]
    if unknown:
        raise ValueError(f"Unknown arm(s) {unknown}; valid arms: {sorted(ARM_INFO)}")
    return arms


def arm_config(cfg: RunConfig, arm: str) -> RunConfig:
    """Config for one arm; differs from cfg in at most the arm's own key."""
    if arm not in ARM_INFO:
        raise ValueError(f"Unknown arm '{arm}'; valid arms: {sorted(ARM_INFO)}")
    change = ARM_INFO[arm]["override"]
    if change is None:
        return cfg
    section, key, value = change
    arm_cfg = override(cfg, section, **{key: value})

    diff = config_diff(cfg, arm_cfg)
    if diff != [f"{section}.{key}"]:
        raise RuntimeError(f"Arm '{arm}' changes {diff}, expected only {section}.{key}")
    return arm_cfg


def _score(name_prefix: str, restored: torch.Tensor, hq: torch.Tensor, lq: torch.Tensor):
    rows = zip(
        [f"{name_prefix}{i}" for i in range(hq.shape[0])],
        tensor_to_images(restored), tensor_to_images(hq), tensor_to_images(lq),
    )
    return evaluate_images(rows)


def run_ablation(cfg: RunConfig, arms: Sequence[str], teacher: ScalewiseTransformer,
                 tokenizer: PyramidTokenizer, hq_images: torch.Tensor, lq_images: torch.Tensor,
                 holdout_hq: torch.Tensor, holdout_lq: torch.Tensor,
                 steps: Optional[int] = None, progress: bool = False) -> pd.DataFrame:
    """
    Train and evaluate each arm on the same data, seed and number of steps.

    Returns:
        One row per arm: mean PSNR/SSIM of the restored holdout and of its LQ
        inputs, plus the config keys the arm changed
    """
    rows: List[Dict] = []
    for arm in arms:
        arm_cfg = arm_config(cfg, arm)
        start = time.perf_counter()
        logger.info("Ablation arm '%s': %s", arm, ARM_INFO[arm]["description"])

        if arm_cfg.distill.one_step:
            result = distill(teacher, tokenizer, hq_images, lq_images, arm_cfg,
                             steps=steps, progress=progress)
            restored, _ = restore_one_step(holdout_lq, result.model, tokenizer)
        else:
            restored, _, _ = zero_shot_upsample(
                holdout_lq, arm_cfg.sampling.zero_shot_scale, teacher, tokenizer,
                seed=derive_seed(arm_cfg.run.seed, STREAM_ZERO_SHOT),
                temperature=arm_cfg.sampling.temperature, top_k=arm_cfg.sampling.top_k,
            )

        means = _score(f"{arm}_", restored, holdout_hq, holdout_lq).means
        rows.append({
            "arm": arm,
            "psnr": means["psnr"],
            "ssim": means["ssim"],
            "psnr_lq": means["psnr_lq"],
            "ssim_lq": means["ssim_lq"],
            "config_diff": ";".join(config_diff(cfg, arm_cfg)),
            "seed": cfg.run.seed,
            "config_hash": config_hash(arm_cfg),
            "description": ARM_INFO[arm]["description"],
        })
        logger.info("Arm '%s' done in %.1f s: PSNR %.2f dB, SSIM %.4f",
                    arm, time.perf_counter() - start, means["psnr"], means["ssim"])

    return pd.DataFrame(rows)
