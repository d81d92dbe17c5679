"""Full-reference image quality metrics and per-image evaluation tables."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from .constants import (
    PSNR_CAP_DB, SSIM_WINDOW, SSIM_SIGMA, SSIM_K1, SSIM_K2, LUMA_WEIGHTS,
)

logger = logging.getLogger(__name__)


def _pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio in dB for images in [0, 1].

    Computed in float64 and capped at PSNR_CAP_DB, which identical images reach.
    """
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def to_luma(image: np.ndarray) -> np.ndarray:
    """BT.601 luma of an HWC RGB image; 2-D inputs pass through."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return image @ np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] == 1:
        return image[..., 0]
    raise ValueError(f"Expected an HxW or HxWx3 image, got shape {image.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Mean structural similarity on luma.

    Uses an 11-tap Gaussian window (sigma 1.5) and only windows that fit
    entirely inside the image.

    Raises:
        ValueError: On mismatched shapes or images smaller than the window
    """
    a, b = _pair(a, b)
    a, b = to_luma(a), to_luma(b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(
            f"SSIM needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[0]}x{a.shape[1]}"
        )

    radius = (SSIM_WINDOW - 1) // 2
    truncate = radius / SSIM_SIGMA

    def local_mean(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=truncate)[radius:-radius, radius:-radius]

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


@dataclass
class MetricReport:
    per_image: pd.DataFrame
    config_hash: str = ""
    wall_ms: float = 0.0

    @property
    def count(self) -> int:
        return len(self.per_image)

    @property
    def means(self) -> Dict[str, float]:
        numeric = self.per_image.select_dtypes(include="number")
        return {column: float(numeric[column].mean()) for column in numeric.columns}


def evaluate_images(rows: Iterable[Tuple[str, np.ndarray, np.ndarray, np.ndarray]],
                    config_hash: str = "") -> MetricReport:
    """
    Score restored images against ground truth, with the LQ input as a baseline.

    Args:
        rows: (name, restored, hq, lq) tuples of HWC float images in [0, 1]

    Raises:
        ValueError: If there is nothing to evaluate
    """
    records = []
    for name, restored, hq, lq in rows:
        records.append({
            "image": name,
            "psnr": psnr(restored, hq),
            "ssim": ssim(restored, hq),
            "psnr_lq": psnr(lq, hq),
            "ssim_lq": ssim(lq, hq),
        })
    if not records:
        raise ValueError("No images to evaluate")

    report = MetricReport(pd.DataFrame(records), config_hash=config_hash)
    means = report.means
    logger.info("Evaluated %d images: PSNR %.2f dB (LQ %.2f), SSIM %.4f (LQ %.4f)",
                report.count, means["psnr"], means["psnr_lq"], means["ssim"], means["ssim_lq"])
    return report
