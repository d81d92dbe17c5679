import math

import pytest
import torch

from src.runconfig import RunConfig, override
from src.validation import (
    validate_backbone_dims,
    validate_degradation_params,
    validate_image_dims,
    validate_interval,
    validate_loss_weights,
    validate_run_config,
    validate_schedule,
    validate_token_pyramid,
)


class TestValidateSchedule:

    def test_valid(self):
        is_valid, error = validate_schedule([(1, 1), (2, 2), (3, 4)])
        assert is_valid
        assert error is None

    def test_empty(self):
        is_valid, error = validate_schedule([])
        assert not is_valid
        assert "at least one scale" in error

    def test_equal_areas(self):
        is_valid, error = validate_schedule([(2, 3), (3, 2)])
        assert not is_valid
        assert "strictly increase" in error

    def test_non_positive_side(self):
        is_valid, error = validate_schedule([(0, 1)])
        assert not is_valid


class TestValidateImageDims:

    def test_divisible(self):
        assert validate_image_dims(64, 32, 4) == (True, None)

    def test_indivisible(self):
        is_valid, error = validate_image_dims(30, 32, 4)
        assert not is_valid
        assert "Dimension mismatch" in error


class TestValidateTokenPyramid:

    def test_valid(self):
        tokens = [torch.zeros(2, 1, 1, dtype=torch.long), torch.ones(2, 2, 2, dtype=torch.long)]
        assert validate_token_pyramid(tokens, [(1, 1), (2, 2)], vocab=4) == (True, None)

    def test_out_of_range(self):
        tokens = [torch.full((1, 1, 1), 4, dtype=torch.long)]
        is_valid, error = validate_token_pyramid(tokens, [(1, 1)], vocab=4)
        assert not is_valid
        assert "Index out of range" in error

    def test_batch_disagreement(self):
        tokens = [torch.zeros(2, 1, 1, dtype=torch.long), torch.zeros(3, 2, 2, dtype=torch.long)]
        is_valid, error = validate_token_pyramid(tokens, [(1, 1), (2, 2)], vocab=4)
        assert not is_valid
        assert "batch" in error


class TestValidateInterval:

    def test_inverted(self):
        is_valid, error = validate_interval("sigma_range", 2.0, 1.0)
        assert not is_valid
        assert "inverted" in error

    def test_bounds(self):
        is_valid, error = validate_interval("quality_range", 0, 50, 1, 100)
        assert not is_valid

    def test_non_finite(self):
        is_valid, _ = validate_interval("noise_range", 0.0, math.inf)
        assert not is_valid


class TestValidateDegradationParams:

    def test_valid_lossless(self):
        assert validate_degradation_params(1.0, 2.0, 0.01, None, 0) == (True, None)

    @pytest.mark.parametrize("args", [
        (-1.0, 1.0, 0.0, None, 0),
        (0.0, 0.5, 0.0, None, 0),
        (0.0, 1.0, -0.1, None, 0),
        (0.0, 1.0, 0.0, 101, 0),
    ])
    def test_invalid(self, args):
        is_valid, error = validate_degradation_params(*args)
        assert not is_valid
        assert error


class TestValidateLossWeights:

    def test_all_zero(self):
        is_valid, error = validate_loss_weights(0.0, 0.0, 0.0)
        assert not is_valid
        assert "strictly positive" in error

    def test_single_positive(self):
        assert validate_loss_weights(0.0, 0.0, 0.5) == (True, None)

    def test_nan(self):
        is_valid, error = validate_loss_weights(math.nan, 0.25, 0.5)
        assert not is_valid
        assert "lambda_kl" in error


class TestValidateBackboneDims:

    def test_head_split(self):
        is_valid, error = validate_backbone_dims(2, 10, 3)
        assert not is_valid
        assert "not divisible" in error


class TestValidateRunConfig:

    def test_defaults(self):
        assert validate_run_config(RunConfig()) == (True, None)

    def test_final_scale_must_match_latent(self):
        cfg = override(RunConfig(), "tokenizer", image_size=32)
        is_valid, error = validate_run_config(cfg)
        assert not is_valid
        assert error.startswith("Tokenizer Error")

    def test_zero_shot_scale_range(self):
        cfg = override(RunConfig(), "sampling", zero_shot_scale=0)
        is_valid, error = validate_run_config(cfg)
        assert not is_valid
        assert "zero_shot_scale" in error

    def test_unknown_mask_mode(self):
        cfg = override(RunConfig(), "distill", mask_mode="sliding")
        is_valid, error = validate_run_config(cfg)
        assert not is_valid
        assert "mask_mode" in error

    def test_negative_seed(self):
        is_valid, error = validate_run_config(override(RunConfig(), "run", seed=-1))
        assert not is_valid
        assert error.startswith("Run Error")
