import logging
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd
from tqdm import tqdm

from .constants import IMAGE_SIZE, MIN_IMAGE_SIZE, MAX_IMAGE_SIZE, STREAM_TOYDATA
from .utils import derive_seed, save_image

logger = logging.getLogger(__name__)

SUPERSAMPLE = 4     # Shape edges are rendered at 4x and box-averaged down


class ToyImageGenerator:
    """
    Procedural RGB images with structure at every scale.

    Each image layers a smooth colour gradient, one or two Gabor-like
    textures and a few anti-aliased discs and rectangles. Image i depends only
    on (seed, i), so any subset can be regenerated on its own.
    """

    def __init__(self, size: int = IMAGE_SIZE, seed: int = 0):
        """
        Args:
            size: Side length of the square images
            seed: Master seed
        """
        if not (MIN_IMAGE_SIZE <= size <= MAX_IMAGE_SIZE):
            raise ValueError(
                f"Image size must be in [{MIN_IMAGE_SIZE}, {MAX_IMAGE_SIZE}], got {size}"
            )
        if seed < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        self.size = size
        self.seed = seed

        coords = (np.arange(size) + 0.5) / size
        self.yy, self.xx = np.meshgrid(coords, coords, indexing="ij")

        fine = (np.arange(size * SUPERSAMPLE) + 0.5) / (size * SUPERSAMPLE)
        self.fine_yy, self.fine_xx = np.meshgrid(fine, fine, indexing="ij")

    def _gradient(self, rng: np.random.Generator) -> np.ndarray:
        angle = rng.uniform(0, 2 * np.pi)
        ramp = np.cos(angle) * self.xx + np.sin(angle) * self.yy
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
        start, end = rng.uniform(0.1, 0.9, size=(2, 3))
        return start + ramp[..., None] * (end - start)

    def _gabor(self, rng: np.random.Generator) -> np.ndarray:
        theta = rng.uniform(0, np.pi)
        frequency = rng.uniform(2.0, self.size / 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        width = rng.uniform(0.15, 0.5)

        u = np.cos(theta) * self.xx + np.sin(theta) * self.yy
        carrier = np.cos(2 * np.pi * frequency * u + phase)
        envelope = np.exp(-((self.xx - cx) ** 2 + (self.yy - cy) ** 2) / (2 * width ** 2))
        colour = rng.uniform(-0.3, 0.3, size=3)
        return (carrier * envelope)[..., None] * colour

    def _shape_coverage(self, rng: np.random.Generator) -> np.ndarray:
        if rng.random() < 0.5:
            cy, cx = rng.uniform(0.15, 0.85, size=2)
            radius = rng.uniform(0.05, 0.3)
            inside = (self.fine_xx - cx) ** 2 + (self.fine_yy - cy) ** 2 <= radius ** 2
        else:
            y0, x0 = rng.uniform(0.0, 0.7, size=2)
            h, w = rng.uniform(0.1, 0.4, size=2)
            inside = ((self.fine_yy >= y0) & (self.fine_yy <= y0 + h)
                      & (self.fine_xx >= x0) & (self.fine_xx <= x0 + w))
        # fractional coverage per output pixel
        blocks = inside.reshape(self.size, SUPERSAMPLE, self.size, SUPERSAMPLE)
        return blocks.mean(axis=(1, 3))

    def image(self, index: int) -> np.ndarray:
        """HxWx3 float32 image in [0, 1] for one index."""
        if index < 0:
            raise ValueError(f"Image index must be non-negative, got {index}")
        rng = np.random.default_rng(derive_seed(self.seed, STREAM_TOYDATA, index))

        img = self._gradient(rng)
        for _ in range(rng.integers(1, 3, endpoint=True)):
            img = img + self._gabor(rng)
        for _ in range(rng.integers(1, 4, endpoint=True)):
            alpha = self._shape_coverage(rng)[..., None]
            colour = rng.uniform(0.0, 1.0, size=3)
            img = img * (1 - alpha) + colour * alpha

        return np.clip(img, 0.0, 1.0).astype(np.float32)

    def images(self, n: int) -> List[np.ndarray]:
        if n < 1:
            raise ValueError(f"Number of images must be >= 1, got {n}")
        return [self.image(i) for i in range(n)]


def generate_toy_dataset(n: int, out_dir, size: int = IMAGE_SIZE, seed: int = 0,
                         progress: bool = True) -> pd.DataFrame:
    """
    Write n PNGs plus a manifest.csv into out_dir.

    Returns:
        Manifest DataFrame with one row per image (path, index, seed, size, std)
    """
    if n < 1:
        raise ValueError(f"Number of images must be >= 1, got {n}")
    generator = ToyImageGenerator(size, seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    width = max(5, len(str(n - 1)))
    for i in tqdm(range(n), desc="Generating images", disable=not progress):
        img = generator.image(i)
        path = out_dir / f"toy_{i:0{width}d}.png"
        save_image(img, path)
        rows.append({"path": str(path), "index": i, "seed": seed, "size": size,
                     "std": float(img.std())})

    manifest = pd.DataFrame(rows)
    logger.info("Generated %d %dx%d images in %s (mean std %.3f)",
                n, size, size, out_dir, manifest["std"].mean())
    return manifest
