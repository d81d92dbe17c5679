import hashlib
import logging
import random
from pathlib import Path
from typing import List

import numpy as np
import torch
from PIL import Image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png",)


def derive_seed(master_seed: int, *counters: int) -> int:
    """
    Derive an independent 63-bit seed from a master seed and a counter path.

    The derivation is counter-based: the seed for (master, i) never depends on
    how many other seeds were drawn before it, so parallel consumers stay
    order-independent.

    Args:
        master_seed: Run-level seed
        *counters: Non-negative integers identifying the consumer

    Returns:
        Integer in [0, 2**63)
    """
    if master_seed < 0 or any(c < 0 for c in counters):
        raise ValueError(
            f"Seeds and counters must be non-negative, got {master_seed}, {counters}"
        )
    state = np.random.SeedSequence([master_seed, *counters]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def set_global_seed(seed: int) -> None:
    """Seed every global RNG and switch torch to deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def torch_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return gen


def parameter_checksum(module: torch.nn.Module, frozen_only: bool = False) -> str:
    """
    sha256 over parameter names and bytes, in registration order.

    Args:
        module: Any torch module
        frozen_only: Restrict to parameters with requires_grad=False
    """
    digest = hashlib.sha256()
    for name, param in module.named_parameters():
        if frozen_only and param.requires_grad:
            continue
        digest.update(name.encode("utf-8"))
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


# ----------------------------------------------------------------------------
# Image IO: HxWxC float in [0, 1] <-> 8-bit RGB PNG
# ----------------------------------------------------------------------------

def to_uint8(image: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to 8 bits with round-half-up."""
    scaled = np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    return rgb / np.float32(255.0)


def save_image(image: np.ndarray, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def list_images(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"Image directory does not exist: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def images_to_tensor(images: List[np.ndarray]) -> torch.Tensor:
    """Stack HxWxC arrays into a (B, C, H, W) float32 tensor."""
    stacked = np.stack([np.asarray(img, dtype=np.float32) for img in images])
    return torch.from_numpy(stacked).permute(0, 3, 1, 2).contiguous()


def tensor_to_images(batch: torch.Tensor) -> List[np.ndarray]:
    """Split a (B, C, H, W) tensor into HxWxC float32 arrays."""
    array = batch.detach().cpu().float().clamp(0.0, 1.0).permute(0, 2, 3, 1).numpy()
    return [np.ascontiguousarray(img) for img in array]


def load_image_tensor(paths) -> torch.Tensor:
    return images_to_tensor([load_image(p) for p in paths])
