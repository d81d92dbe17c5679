import math
from typing import Optional, Sequence, Tuple

from .constants import (
    # Degradation
    MIN_JPEG_QUALITY,
    MAX_JPEG_QUALITY,
    # Bounds
    MIN_IMAGE_SIZE,
    MAX_IMAGE_SIZE,
    MIN_VOCAB_SIZE,
)


def validate_schedule(scales: Sequence[Tuple[int, int]]) -> Tuple[bool, Optional[str]]:
    """
    Validate a scale schedule.

    Args:
        scales: Ordered (h_k, w_k) pairs, coarsest first

    Returns:
        Tuple of (is_valid, error_message)
    """
    if len(scales) == 0:
        return False, "Schedule must contain at least one scale"

    for k, (h, w) in enumerate(scales):
        if int(h) != h or int(w) != w or h < 1 or w < 1:
            return False, f"Scale {k + 1} must have positive integer sides, got {h}x{w}"

    for k in range(1, len(scales)):
        (h0, w0), (h1, w1) = scales[k - 1], scales[k]
        if h1 * w1 <= h0 * w0:
            return False, (
                f"Scale areas must strictly increase: scale {k} is {h0}x{w0}, "
                f"scale {k + 1} is {h1}x{w1}"
            )
        if h1 < h0 or w1 < w0:
            return False, (
                f"Scale sides must not shrink: scale {k} is {h0}x{w0}, "
                f"scale {k + 1} is {h1}x{w1}"
            )

    return True, None


def validate_image_dims(height: int, width: int, factor: int) -> Tuple[bool, Optional[str]]:
    """Check that an image tiles exactly into the encoder's latent grid."""
    if height < 1 or width < 1:
        return False, f"Image must be non-empty, got {height}x{width}"

    if height % factor != 0 or width % factor != 0:
        return False, (
            f"Dimension mismatch: {height}x{width} image is not divisible by "
            f"the downsampling factor {factor}"
        )

    return True, None


def validate_token_pyramid(tokens, scales, vocab: int) -> Tuple[bool, Optional[str]]:
    """
    Validate a token pyramid against a schedule and codebook size.

    Args:
        tokens: List of integer tensors shaped (B, h_k, w_k)
        scales: Schedule scales
        vocab: Codebook size V
    """
    if len(tokens) != len(scales):
        return False, f"Pyramid has {len(tokens)} maps, schedule has {len(scales)} scales"

    batch = None
    for k, (tmap, (h, w)) in enumerate(zip(tokens, scales)):
        if tmap.dim() != 3 or tuple(tmap.shape[1:]) != (h, w):
            return False, (
                f"Token map {k + 1} has shape {tuple(tmap.shape)}, expected (B, {h}, {w})"
            )
        if batch is None:
            batch = tmap.shape[0]
        elif tmap.shape[0] != batch:
            return False, f"Token map {k + 1} has batch {tmap.shape[0]}, expected {batch}"
        if tmap.numel() and (int(tmap.min()) < 0 or int(tmap.max()) >= vocab):
            return False, (
                f"Index out of range: token map {k + 1} holds values in "
                f"[{int(tmap.min())}, {int(tmap.max())}], codebook has {vocab} entries"
            )

    return True, None


def validate_interval(name: str, low: float, high: float,
                      minimum: float = -math.inf,
                      maximum: float = math.inf) -> Tuple[bool, Optional[str]]:
    if not (math.isfinite(low) and math.isfinite(high)):
        return False, f"{name} must be finite, got [{low}, {high}]"

    if low > high:
        return False, f"{name} is inverted: [{low}, {high}]"

    if low < minimum or high > maximum:
        return False, f"{name} must lie within [{minimum}, {maximum}], got [{low}, {high}]"

    return True, None


def validate_degradation_params(blur_sigma: float, downsample_factor: float,
                                noise_sigma: float, jpeg_quality: Optional[int],
                                seed: int) -> Tuple[bool, Optional[str]]:
    """
    Validate one set of degradation parameters.

    jpeg_quality=None is the lossless sentinel.
    """
    if not math.isfinite(blur_sigma) or blur_sigma < 0:
        return False, f"Blur sigma must be non-negative, got {blur_sigma}"

    if not math.isfinite(downsample_factor) or downsample_factor < 1:
        return False, f"Downsample factor must be >= 1, got {downsample_factor}"

    if not math.isfinite(noise_sigma) or noise_sigma < 0:
        return False, f"Noise sigma must be non-negative, got {noise_sigma}"

    if jpeg_quality is not None:
        if int(jpeg_quality) != jpeg_quality or not (
            MIN_JPEG_QUALITY <= jpeg_quality <= MAX_JPEG_QUALITY
        ):
            return False, (
                f"JPEG quality must be an integer in [{MIN_JPEG_QUALITY}, "
                f"{MAX_JPEG_QUALITY}] or lossless, got {jpeg_quality}"
            )

    if seed < 0 or seed >= 2**64:
        return False, f"Seed must be a 64-bit unsigned integer, got {seed}"

    return True, None


def validate_loss_weights(lambda_kl: float, lambda_perc: float,
                          lambda_mse: float) -> Tuple[bool, Optional[str]]:
    weights = {"lambda_kl": lambda_kl, "lambda_perc": lambda_perc, "lambda_mse": lambda_mse}

    for name, value in weights.items():
        if not math.isfinite(value) or value < 0:
            return False, f"{name} must be a finite non-negative number, got {value}"

    if all(value == 0 for value in weights.values()):
        return False, "At least one loss weight must be strictly positive"

    return True, None


def validate_backbone_dims(layers: int, model_dim: int, heads: int) -> Tuple[bool, Optional[str]]:
    if layers < 1:
        return False, f"Backbone needs at least one layer, got {layers}"

    if heads < 1 or model_dim < 1:
        return False, f"model_dim and heads must be positive, got {model_dim}, {heads}"

    if model_dim % heads != 0:
        return False, f"model_dim {model_dim} is not divisible by heads {heads}"

    return True, None


def validate_run_config(cfg) -> Tuple[bool, Optional[str]]:
    """
    Validate a whole RunConfig at once.

    Runs all checks in sequence and returns the first error found, prefixed
    with the section it came from.
    """
    tok = cfg.tokenizer

    if cfg.run.seed < 0 or cfg.run.workers < 1:
        return False, (
            f"Run Error: seed must be >= 0 and workers >= 1, "
            f"got {cfg.run.seed}, {cfg.run.workers}"
        )

    if not (MIN_IMAGE_SIZE <= tok.image_size <= MAX_IMAGE_SIZE):
        return False, (
            f"Tokenizer Error: image_size must be in [{MIN_IMAGE_SIZE}, "
            f"{MAX_IMAGE_SIZE}], got {tok.image_size}"
        )

    if tok.vocab < MIN_VOCAB_SIZE or tok.embed_dim < 1:
        return False, (
            f"Tokenizer Error: need vocab >= {MIN_VOCAB_SIZE} and embed_dim >= 1, "
            f"got {tok.vocab}, {tok.embed_dim}"
        )

    is_valid, error = validate_image_dims(tok.image_size, tok.image_size, tok.downsample)
    if not is_valid:
        return False, f"Tokenizer Error: {error}"

    scales = tok.scales
    is_valid, error = validate_schedule(scales)
    if not is_valid:
        return False, f"Tokenizer Error: {error}"

    latent = tok.image_size // tok.downsample
    if tuple(scales[-1]) != (latent, latent):
        return False, (
            f"Tokenizer Error: final scale {scales[-1][0]}x{scales[-1][1]} does not "
            f"match the {latent}x{latent} latent grid"
        )

    bb = cfg.backbone
    is_valid, error = validate_backbone_dims(bb.layers, bb.model_dim, bb.heads)
    if not is_valid:
        return False, f"Backbone Error: {error}"

    if cfg.adapter.rank < 1 or cfg.adapter.alpha <= 0:
        return False, (
            f"Adapter Error: rank must be >= 1 and alpha > 0, "
            f"got {cfg.adapter.rank}, {cfg.adapter.alpha}"
        )

    is_valid, error = validate_loss_weights(
        cfg.loss.lambda_kl, cfg.loss.lambda_perc, cfg.loss.lambda_mse
    )
    if not is_valid:
        return False, f"Loss Error: {error}"

    deg = cfg.degradation
    checks = [
        ("sigma_range", deg.sigma_range, 0.0, math.inf),
        ("noise_range", deg.noise_range, 0.0, math.inf),
        ("quality_range", deg.quality_range, MIN_JPEG_QUALITY, MAX_JPEG_QUALITY),
    ]
    for name, (low, high), minimum, maximum in checks:
        is_valid, error = validate_interval(name, low, high, minimum, maximum)
        if not is_valid:
            return False, f"Degradation Error: {error}"

    if not deg.factors or any(f < 1 for f in deg.factors):
        return False, f"Degradation Error: factors must all be >= 1, got {deg.factors}"

    if cfg.distill.mask_mode not in ("full", "block_causal"):
        return False, (
            f"Training Error: mask_mode must be full or block_causal, got {cfg.distill.mask_mode}"
        )

    if cfg.sampling.temperature <= 0:
        return False, (
            f"Sampling Error: temperature must be positive, got {cfg.sampling.temperature}"
        )

    if not (1 <= cfg.sampling.zero_shot_scale < len(scales)):
        return False, (
            f"Sampling Error: zero_shot_scale must be in [1, {len(scales) - 1}], "
            f"got {cfg.sampling.zero_shot_scale}"
        )

    for section, steps in (("tokenizer", tok.steps), ("teacher", cfg.teacher.steps),
                           ("distill", cfg.distill.steps)):
        if steps < 1:
            return False, f"Training Error: {section} steps must be >= 1, got {steps}"

    return True, None
