"""Multi-scale residual vector-quantized autoencoder."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import Checkpoint
from .constants import (
    IMAGE_CHANNELS,
    COMMITMENT_WEIGHT,
    EMA_DECAY,
    DEAD_CODE_THRESHOLD,
    EMA_EPSILON,
    NN_CHUNK_ROWS,
)
from .validation import validate_schedule, validate_image_dims, validate_token_pyramid

logger = logging.getLogger(__name__)


def parse_scales(text: str) -> Tuple[Tuple[int, int], ...]:
    """Parse "1x1,2x2,4x4" into ((1, 1), (2, 2), (4, 4))."""
    scales = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        parts = item.split("x")
        if len(parts) != 2:
            raise ValueError(f"Scale '{item}' must look like HxW")
        try:
            scales.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise ValueError(f"Scale '{item}' must have integer sides") from exc
    return tuple(scales)


@dataclass(frozen=True)
class ScaleSchedule:
    """Ordered (h_k, w_k) token-map sizes, coarsest first."""

    scales: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        scales = tuple((int(h), int(w)) for h, w in self.scales)
        object.__setattr__(self, "scales", scales)
        is_valid, error = validate_schedule(scales)
        if not is_valid:
            raise ValueError(error)

    @classmethod
    def from_string(cls, text: str) -> "ScaleSchedule":
        return cls(parse_scales(text))

    def __str__(self) -> str:
        return ",".join(f"{h}x{w}" for h, w in self.scales)

    def __len__(self) -> int:
        return len(self.scales)

    @property
    def final(self) -> Tuple[int, int]:
        return self.scales[-1]

    @property
    def areas(self) -> List[int]:
        return [h * w for h, w in self.scales]

    @property
    def total_tokens(self) -> int:
        return sum(self.areas)

    def offsets(self) -> List[int]:
        """Start position of every scale in the flattened sequence."""
        starts, position = [], 0
        for area in self.areas:
            starts.append(position)
            position += area
        return starts

    def scale_index(self) -> torch.Tensor:
        """Scale id (0-based) of each of the T sequence positions."""
        return torch.repeat_interleave(
            torch.arange(len(self.scales)), torch.tensor(self.areas)
        )

    def prefix(self, k: int) -> "ScaleSchedule":
        return ScaleSchedule(self.scales[:k])


# ----------------------------------------------------------------------------
# Residual quantization
# ----------------------------------------------------------------------------

def nearest_codes(vectors: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """
    Exhaustive Euclidean nearest-neighbour search.

    Distances are computed directly as squared differences (no expansion), in
    row chunks. torch.argmin returns the first minimum, so ties resolve to
    the lowest codebook index.

    Args:
        vectors: (N, d)
        codebook: (V, d)

    Returns:
        (N,) LongTensor of codebook indices
    """
    out = torch.empty(vectors.shape[0], dtype=torch.long, device=vectors.device)
    for start in range(0, vectors.shape[0], NN_CHUNK_ROWS):
        chunk = vectors[start:start + NN_CHUNK_ROWS]
        dist = (chunk[:, None, :] - codebook[None, :, :]).pow(2).sum(dim=-1)
        out[start:start + NN_CHUNK_ROWS] = dist.argmin(dim=1)
    return out


def lookup(token_map: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """(B, h, w) indices -> (B, d, h, w) code vectors."""
    return F.embedding(token_map, codebook).permute(0, 3, 1, 2)


def upsample_to(embedding: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    if tuple(embedding.shape[-2:]) == tuple(size):
        return embedding
    return F.interpolate(embedding, size=size, mode="bilinear", align_corners=False)


def downsample_to(residual: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    if tuple(residual.shape[-2:]) == tuple(size):
        return residual
    return F.interpolate(residual, size=size, mode="area")


def _quantize_scale(residual: torch.Tensor, size: Tuple[int, int],
                    codebook: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    coarse = downsample_to(residual, size)
    B, d, h, w = coarse.shape
    flat = coarse.permute(0, 2, 3, 1).reshape(-1, d)
    token_map = nearest_codes(flat, codebook).view(B, h, w)
    return token_map, coarse


def quantize_pyramid(features: torch.Tensor, schedule: ScaleSchedule,
                     codebook: torch.Tensor, return_residuals: bool = False):
    """
    Residual quantization of a feature grid over a scale schedule.

    Args:
        features: (B, d, h_K, w_K) feature grid
        schedule: Scale schedule
        codebook: (V, d) shared codebook
        return_residuals: Also return the downsampled residual at each scale

    Returns:
        (tokens, accumulator) or (tokens, accumulator, residuals)
    """
    if features.dim() != 4 or tuple(features.shape[-2:]) != schedule.final \
            or features.shape[1] != codebook.shape[1]:
        raise ValueError(
            f"Shape mismatch: features {tuple(features.shape)} do not match final scale "
            f"{schedule.final} with embedding dim {codebook.shape[1]}"
        )

    accumulator = torch.zeros_like(features)
    residual = features
    tokens, residuals = [], []
    for size in schedule.scales:
        token_map, coarse = _quantize_scale(residual, size, codebook)
        accumulator = accumulator + upsample_to(lookup(token_map, codebook), schedule.final)
        residual = features - accumulator
        tokens.append(token_map)
        residuals.append(coarse)

    if return_residuals:
        return tokens, accumulator, residuals
    return tokens, accumulator


def accumulate_embeddings(embeddings: Sequence[torch.Tensor],
                          final: Tuple[int, int]) -> torch.Tensor:
    """Sum per-scale (B, d, h_k, w_k) maps after upsampling to the final grid."""
    accumulator = None
    for embedding in embeddings:
        up = upsample_to(embedding, final)
        accumulator = torch.zeros_like(up) + up if accumulator is None else accumulator + up
    return accumulator


def dequantize_pyramid(tokens: Sequence[torch.Tensor], schedule: ScaleSchedule,
                       codebook: torch.Tensor) -> torch.Tensor:
    is_valid, error = validate_token_pyramid(tokens, schedule.scales, codebook.shape[0])
    if not is_valid:
        raise ValueError(error)
    return accumulate_embeddings([lookup(t, codebook) for t in tokens], schedule.final)


def residual_energies(features: torch.Tensor, schedule: ScaleSchedule,
                      codebook: torch.Tensor) -> torch.Tensor:
    """Mean squared residual per sample after each scale, shape (B, K)."""
    tokens, _ = quantize_pyramid(features, schedule, codebook)
    energies = []
    accumulator = torch.zeros_like(features)
    for token_map in tokens:
        accumulator = accumulator + upsample_to(lookup(token_map, codebook), schedule.final)
        energies.append((features - accumulator).pow(2).mean(dim=(1, 2, 3)))
    return torch.stack(energies, dim=1)


# ----------------------------------------------------------------------------
# Networks
# ----------------------------------------------------------------------------

def _stride_stages(downsample: int) -> int:
    stages = int(round(math.log2(downsample))) if downsample >= 1 else -1
    if stages < 0 or 2 ** stages != downsample:
        raise ValueError(f"Downsampling factor must be a power of two, got {downsample}")
    return stages


class Encoder(nn.Module):
    def __init__(self, embed_dim: int, hidden: int, downsample: int,
                 channels: int = IMAGE_CHANNELS):
        super().__init__()
        layers = [nn.Conv2d(channels, hidden, 3, padding=1), nn.GELU()]
        for _ in range(_stride_stages(downsample)):
            layers += [nn.Conv2d(hidden, hidden, 4, stride=2, padding=1), nn.GELU()]
        layers.append(nn.Conv2d(hidden, embed_dim, 1))
        self.blocks = nn.Sequential(*layers)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.blocks(images * 2.0 - 1.0)


class Decoder(nn.Module):
    def __init__(self, embed_dim: int, hidden: int, downsample: int,
                 channels: int = IMAGE_CHANNELS):
        super().__init__()
        layers = [nn.Conv2d(embed_dim, hidden, 3, padding=1), nn.GELU()]
        for _ in range(_stride_stages(downsample)):
            layers += [nn.ConvTranspose2d(hidden, hidden, 4, stride=2, padding=1), nn.GELU()]
        layers.append(nn.Conv2d(hidden, channels, 3, padding=1))
        self.blocks = nn.Sequential(*layers)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        # sigmoid bounds pixels to [0, 1]
        return torch.sigmoid(self.blocks(features))


class PyramidQuantizer(nn.Module):
    """
    Shared codebook learned with exponential moving averages.

    Codes whose EMA count falls below the dead-code threshold are re-seeded
    from residual vectors of the current batch.
    """

    def __init__(self, vocab: int, embed_dim: int, num_scales: int,
                 decay: float = EMA_DECAY, dead_threshold: float = DEAD_CODE_THRESHOLD,
                 seed: int = 0):
        super().__init__()
        self.vocab = vocab
        self.decay = decay
        self.dead_threshold = dead_threshold

        gen = torch.Generator().manual_seed(seed)
        self.register_buffer("codebook", torch.randn(vocab, embed_dim, generator=gen))
        self.register_buffer("ema_count", torch.zeros(vocab))
        self.register_buffer("ema_sum", torch.zeros(vocab, embed_dim))
        self.register_buffer("usage", torch.zeros(num_scales, vocab))

    @torch.no_grad()
    def ema_update(self, tokens: Sequence[torch.Tensor], residuals: Sequence[torch.Tensor],
                   generator: Optional[torch.Generator] = None) -> int:
        """
        One EMA step from the codes assigned at every scale.

        Returns:
            Number of dead codes re-seeded
        """
        d = self.codebook.shape[1]
        flat_idx, flat_vec = [], []
        for k, (token_map, coarse) in enumerate(zip(tokens, residuals)):
            idx = token_map.reshape(-1)
            flat_idx.append(idx)
            flat_vec.append(coarse.permute(0, 2, 3, 1).reshape(-1, d))
            hits = torch.bincount(idx, minlength=self.vocab).to(self.usage.dtype)
            self.usage[k].mul_(self.decay).add_(hits, alpha=1 - self.decay)

        idx = torch.cat(flat_idx)
        vectors = torch.cat(flat_vec).to(self.codebook.dtype)

        hits = torch.bincount(idx, minlength=self.vocab).to(self.ema_count.dtype)
        sums = torch.zeros_like(self.ema_sum).index_add_(0, idx, vectors)
        self.ema_count.mul_(self.decay).add_(hits, alpha=1 - self.decay)
        self.ema_sum.mul_(self.decay).add_(sums, alpha=1 - self.decay)

        total = self.ema_count.sum()
        smoothed = (self.ema_count + EMA_EPSILON) / (total + self.vocab * EMA_EPSILON) * total
        self.codebook.copy_(self.ema_sum / smoothed.clamp_min(EMA_EPSILON).unsqueeze(1))

        dead = torch.nonzero(self.ema_count < self.dead_threshold).squeeze(1)
        if dead.numel():
            pick = torch.randint(0, vectors.shape[0], (dead.numel(),), generator=generator)
            self.codebook[dead] = vectors[pick]
            self.ema_sum[dead] = vectors[pick] * smoothed[dead].clamp_min(EMA_EPSILON).unsqueeze(1)
        return int(dead.numel())

    def active_fraction(self) -> float:
        return float((self.ema_count >= self.dead_threshold).float().mean())

    def usage_per_scale(self) -> List[float]:
        """Fraction of codes with non-negligible usage at each scale."""
        return [float((row >= self.dead_threshold).float().mean()) for row in self.usage]


class PyramidTokenizer(nn.Module):
    """
    Encoder, shared-codebook residual quantizer and decoder.

    Images are (B, C, H, W) tensors in [0, 1]; feature maps are
    (B, d, H/f, W/f); token pyramids are lists of (B, h_k, w_k) LongTensors.
    """

    def __init__(self, schedule: ScaleSchedule, vocab: int, embed_dim: int,
                 hidden: int, downsample: int, commitment: float = COMMITMENT_WEIGHT,
                 ema_decay: float = EMA_DECAY, dead_threshold: float = DEAD_CODE_THRESHOLD,
                 seed: int = 0):
        super().__init__()
        self.schedule = schedule
        self.vocab = vocab
        self.embed_dim = embed_dim
        self.hidden = hidden
        self.downsample = downsample
        self.commitment = commitment

        self.encoder = Encoder(embed_dim, hidden, downsample)
        self.decoder = Decoder(embed_dim, hidden, downsample)
        self.quantizer = PyramidQuantizer(vocab, embed_dim, len(schedule),
                                          ema_decay, dead_threshold, seed)

    @property
    def codebook(self) -> torch.Tensor:
        return self.quantizer.codebook

    def meta(self) -> dict:
        return {
            "schedule": str(self.schedule),
            "vocab": self.vocab,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "downsample": self.downsample,
            "commitment": self.commitment,
            "ema_decay": self.quantizer.decay,
            "dead_threshold": self.quantizer.dead_threshold,
        }

    def encode_features(self, images: torch.Tensor) -> torch.Tensor:
        H, W = images.shape[-2:]
        is_valid, error = validate_image_dims(H, W, self.downsample)
        if not is_valid:
            raise ValueError(error)
        return self.encoder(images)

    def quantize(self, features: torch.Tensor, return_residuals: bool = False):
        return quantize_pyramid(features, self.schedule, self.codebook, return_residuals)

    def dequantize(self, tokens: Sequence[torch.Tensor]) -> torch.Tensor:
        return dequantize_pyramid(tokens, self.schedule, self.codebook)

    def decode_image(self, features: torch.Tensor) -> torch.Tensor:
        if features.dim() != 4 or features.shape[1] != self.embed_dim:
            raise ValueError(
                f"Shape mismatch: decoder expects (B, {self.embed_dim}, h, w), "
                f"got {tuple(features.shape)}"
            )
        return self.decoder(features)

    @torch.no_grad()
    def tokenize(self, images: torch.Tensor) -> List[torch.Tensor]:
        tokens, _ = self.quantize(self.encode_features(images))
        return tokens

    @torch.no_grad()
    def detokenize(self, tokens: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.decode_image(self.dequantize(tokens))

    def forward(self, images: torch.Tensor, generator: Optional[torch.Generator] = None) -> dict:
        """
        One training forward: straight-through reconstruction and losses.

        The EMA codebook step runs as a side effect when the module is in
        training mode.
        """
        features = self.encode_features(images)
        with torch.no_grad():
            tokens, accumulator, residuals = self.quantize(features.detach(), return_residuals=True)

        quantized = features + (accumulator - features).detach()
        recon = self.decoder(quantized)

        rec_loss = F.mse_loss(recon, images)
        commit_loss = F.mse_loss(features, accumulator)
        loss = rec_loss + self.commitment * commit_loss

        reseeded = 0
        if self.training:
            reseeded = self.quantizer.ema_update(tokens, residuals, generator)

        return {
            "recon": recon,
            "tokens": tokens,
            "rec_loss": rec_loss,
            "commit_loss": commit_loss,
            "loss": loss,
            "reseeded": reseeded,
        }

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "PyramidTokenizer":
        meta = ckpt.meta
        model = cls(
            schedule=ScaleSchedule.from_string(meta["schedule"]),
            vocab=meta["vocab"],
            embed_dim=meta["embed_dim"],
            hidden=meta["hidden"],
            downsample=meta["downsample"],
            commitment=meta["commitment"],
            ema_decay=meta["ema_decay"],
            dead_threshold=meta["dead_threshold"],
        )
        model.load_state_dict(ckpt.state_dict())
        model.eval()
        return model
