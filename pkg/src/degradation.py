"""
Synthetic LQ generation: blur, area downsample, Gaussian noise, JPEG, then a
bicubic resize back to the HQ size.

Images are HxWxC float arrays in [0, 1]. All randomness comes from the seed
carried in DegradationParams, so a parameter record fully determines its
output.
"""

import io
import logging
import math
import multiprocessing as mp
from dataclasses import dataclass, asdict
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .constants import (
    SIGMA_RANGE,
    DOWNSAMPLE_FACTORS,
    NOISE_RANGE,
    QUALITY_RANGE,
    MIN_JPEG_QUALITY,
    MAX_JPEG_QUALITY,
    JPEG_FULL_CHROMA_QUALITY,
    KERNEL_RADIUS_SIGMAS,
    LOSSLESS,
)
from .utils import derive_seed, load_image, save_image, to_uint8
from .validation import validate_degradation_params, validate_interval

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DegradationParams:
    blur_sigma: float
    downsample_factor: float
    noise_sigma: float
    jpeg_quality: Optional[int]      # None is the lossless sentinel
    seed: int
    impulse_amount: float = 0.0

    def __post_init__(self):
        is_valid, error = validate_degradation_params(
            self.blur_sigma, self.downsample_factor, self.noise_sigma,
            self.jpeg_quality, self.seed,
        )
        if not is_valid:
            raise ValueError(error)
        if not (0.0 <= self.impulse_amount <= 1.0):
            raise ValueError(f"Impulse amount must be in [0, 1], got {self.impulse_amount}")

    @classmethod
    def neutral(cls, seed: int = 0) -> "DegradationParams":
        return cls(0.0, 1.0, 0.0, None, seed)


@dataclass(frozen=True)
class DegradationRanges:
    sigma_range: Tuple[float, float] = SIGMA_RANGE
    factors: Tuple[float, ...] = DOWNSAMPLE_FACTORS
    noise_range: Tuple[float, float] = NOISE_RANGE
    quality_range: Tuple[int, int] = QUALITY_RANGE
    lossless: bool = False
    impulse_amount: float = 0.0

    def __post_init__(self):
        checks = [
            ("sigma_range", self.sigma_range, 0.0, math.inf),
            ("noise_range", self.noise_range, 0.0, math.inf),
            ("quality_range", self.quality_range, MIN_JPEG_QUALITY, MAX_JPEG_QUALITY),
        ]
        for name, (low, high), minimum, maximum in checks:
            is_valid, error = validate_interval(name, low, high, minimum, maximum)
            if not is_valid:
                raise ValueError(error)
        if not self.factors or any(f < 1 for f in self.factors):
            raise ValueError(f"Downsample factors must be non-empty and >= 1, got {self.factors}")

    @classmethod
    def from_config(cls, section) -> "DegradationRanges":
        return cls(
            sigma_range=tuple(section.sigma_range),
            factors=tuple(section.factors),
            noise_range=tuple(section.noise_range),
            quality_range=tuple(section.quality_range),
            lossless=section.lossless,
            impulse_amount=section.impulse_amount,
        )


def gaussian_kernel(sigma: float) -> np.ndarray:
    """
    Normalized isotropic Gaussian with side 2*ceil(3*sigma)+1.

    sigma=0 gives the 1x1 identity kernel.
    """
    if not math.isfinite(sigma) or sigma < 0:
        raise ValueError(f"Blur sigma must be non-negative, got {sigma}")

    if sigma == 0:
        return np.ones((1, 1), dtype=np.float64)

    radius = int(math.ceil(KERNEL_RADIUS_SIGMAS * sigma))
    [x, y] = np.meshgrid(np.arange(-radius, radius + 1), np.arange(-radius, radius + 1))
    h = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    return h / h.sum()


def _blur(image: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel(sigma)
    return ndimage.convolve(image, np.expand_dims(k, axis=2), mode="mirror")


def _resize(image: np.ndarray, size: Tuple[int, int], resample) -> np.ndarray:
    """Per-channel float resize; size is (height, width)."""
    height, width = size
    channels = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(image[..., c], dtype=np.float32))
            .resize((width, height), resample=resample),
            dtype=np.float64,
        )
        for c in range(image.shape[2])
    ]
    return np.stack(channels, axis=2)


def _jpeg_round_trip(image: np.ndarray, quality: int) -> np.ndarray:
    subsampling = 0 if quality >= JPEG_FULL_CHROMA_QUALITY else 2
    buffer = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(
        buffer, format="JPEG", quality=int(quality), subsampling=subsampling,
        optimize=False, progressive=False,
    )
    buffer.seek(0)
    with Image.open(buffer) as decoded:
        return np.asarray(decoded.convert("RGB"), dtype=np.float64) / 255.0


def salt_and_pepper(image: np.ndarray, amount: float, seed: int) -> np.ndarray:
    """Set a random fraction of pixels to black or white across all channels."""
    if not (0.0 <= amount <= 1.0):
        raise ValueError(f"Impulse amount must be in [0, 1], got {amount}")
    out = np.array(image, dtype=np.float64, copy=True)
    if amount == 0:
        return out
    rng = np.random.default_rng(seed)
    hit = rng.random(out.shape[:2]) < amount
    white = rng.random(out.shape[:2]) < 0.5
    out[hit & white] = 1.0
    out[hit & ~white] = 0.0
    return out


def degrade(image: np.ndarray, params: DegradationParams) -> np.ndarray:
    """
    Apply [(k * x)_down_r + n]_JPEG, then resize back to the input size.

    With every other parameter fixed, PSNR against the input falls as
    noise_sigma grows. Under JPEG the codec is not monotone, so at a fixed
    quality the PSNR may rise by up to 0.1 dB between neighbouring noise levels.

    Args:
        image: HxWxC float image in [0, 1]
        params: Degradation parameters

    Returns:
        HxWxC float32 image in [0, 1]
    """
    image = np.asarray(image)
    if image.ndim != 3 or min(image.shape) < 1:
        raise ValueError(f"Expected an HxWxC image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("Image contains non-finite values")

    H, W = image.shape[:2]
    out = image.astype(np.float64)

    if params.blur_sigma > 0:
        out = _blur(out, params.blur_sigma)

    if params.downsample_factor != 1:
        size = (max(1, int(round(H / params.downsample_factor))),
                max(1, int(round(W / params.downsample_factor))))
        out = _resize(out, size, Image.Resampling.BOX)

    if params.noise_sigma > 0:
        rng = np.random.default_rng(params.seed)
        out = out + rng.normal(0.0, params.noise_sigma, size=out.shape)

    if params.jpeg_quality is not None:
        out = _jpeg_round_trip(np.clip(out, 0.0, 1.0), params.jpeg_quality)

    if params.impulse_amount > 0:
        out = salt_and_pepper(out, params.impulse_amount, derive_seed(params.seed, 1))

    if out.shape[:2] != (H, W):
        out = _resize(out, (H, W), Image.Resampling.BICUBIC)

    return np.clip(out, 0.0, 1.0).astype(np.float32)


def sample_params(ranges: DegradationRanges, rng: np.random.Generator) -> DegradationParams:
    """Draw one parameter set; the draw order is fixed so streams replay exactly."""
    blur_sigma = float(rng.uniform(*ranges.sigma_range))
    factor = float(ranges.factors[int(rng.integers(len(ranges.factors)))])
    noise_sigma = float(rng.uniform(*ranges.noise_range))
    quality = int(rng.integers(ranges.quality_range[0], ranges.quality_range[1], endpoint=True))
    seed = int(rng.integers(0, 2**63))
    return DegradationParams(
        blur_sigma=blur_sigma,
        downsample_factor=factor,
        noise_sigma=noise_sigma,
        jpeg_quality=None if ranges.lossless else quality,
        seed=seed,
        impulse_amount=ranges.impulse_amount,
    )


def params_to_record(params: DegradationParams) -> dict:
    record = asdict(params)
    record["jpeg_quality"] = LOSSLESS if params.jpeg_quality is None else params.jpeg_quality
    return record


def params_from_record(record) -> DegradationParams:
    quality = record["jpeg_quality"]
    return DegradationParams(
        blur_sigma=float(record["blur_sigma"]),
        downsample_factor=float(record["downsample_factor"]),
        noise_sigma=float(record["noise_sigma"]),
        jpeg_quality=None if str(quality) == LOSSLESS else int(quality),
        seed=int(record["seed"]),
        impulse_amount=float(record.get("impulse_amount", 0.0)),
    )


def _degrade_one(job, lq_dir: Path, ranges: DegradationRanges, seed: int):
    index, hq_path = job
    params = sample_params(ranges, np.random.default_rng(derive_seed(seed, index)))
    try:
        image = load_image(hq_path)
    except (OSError, ValueError) as exc:
        return index, hq_path, None, params, f"{type(exc).__name__}: {exc}"

    lq_path = lq_dir / Path(hq_path).name
    save_image(degrade(image, params), lq_path)
    return index, hq_path, lq_path, params, None


def make_pairs(hq_paths: Sequence, lq_dir, ranges: DegradationRanges, seed: int,
               workers: int = 1) -> Tuple[List[dict], List[Tuple[str, str]]]:
    """
    Degrade every HQ image and collect manifest records.

    Parameters for image i come from derive_seed(seed, i), so results do not
    depend on worker scheduling.

    Returns:
        (records, failures): one record per readable image in input order,
        and (path, reason) for every image that could not be read
    """
    if len(hq_paths) == 0:
        raise ValueError("Cannot build pairs from an empty dataset")

    lq_dir = Path(lq_dir)
    lq_dir.mkdir(parents=True, exist_ok=True)
    jobs = list(enumerate(hq_paths))
    work = partial(_degrade_one, lq_dir=lq_dir, ranges=ranges, seed=seed)

    if workers > 1:
        with mp.Pool(workers) as pool:
            results = pool.map(work, jobs)
    else:
        results = [work(job) for job in jobs]

    records, failures = [], []
    for index, hq_path, lq_path, params, error in sorted(results, key=lambda r: r[0]):
        if error is not None:
            logger.warning("Skipping unreadable image %s (%s)", hq_path, error)
            failures.append((str(hq_path), error))
            continue
        records.append({"hq_path": str(hq_path), "lq_path": str(lq_path),
                        **params_to_record(params)})

    logger.info("Degraded %d images, %d skipped", len(records), len(failures))
    return records, failures
