import dataclasses

import pytest
import numpy as np
import torch

from src.tokenizer import (
    PyramidQuantizer,
    PyramidTokenizer,
    ScaleSchedule,
    dequantize_pyramid,
    lookup,
    nearest_codes,
    parse_scales,
    quantize_pyramid,
    residual_energies,
)
from src.toydata import ToyImageGenerator
from src.training import train_tokenizer
from src.utils import images_to_tensor


class TestScaleSchedule:

    def test_parse_and_format(self):
        schedule = ScaleSchedule.from_string("1x1, 2x2,4x4")
        assert schedule.scales == ((1, 1), (2, 2), (4, 4))
        assert str(schedule) == "1x1,2x2,4x4"
        assert len(schedule) == 3
        assert schedule.final == (4, 4)

    def test_offsets_and_total(self):
        schedule = ScaleSchedule.from_string("1x1,2x2,4x4")
        assert schedule.areas == [1, 4, 16]
        assert schedule.offsets() == [0, 1, 5]
        assert schedule.total_tokens == 21
        assert schedule.scale_index().tolist() == [0] + [1] * 4 + [2] * 16

    def test_areas_must_increase(self):
        with pytest.raises(ValueError, match="strictly increase"):
            ScaleSchedule(((2, 2), (2, 2)))

    def test_sides_must_not_shrink(self):
        with pytest.raises(ValueError, match="must not shrink"):
            ScaleSchedule(((1, 4), (2, 3)))

    def test_bad_scale_text(self):
        with pytest.raises(ValueError):
            parse_scales("1x1,2by2")

    def test_prefix(self):
        schedule = ScaleSchedule.from_string("1x1,2x2,4x4")
        assert str(schedule.prefix(2)) == "1x1,2x2"


class TestEncodeFeatures:

    def test_toy_shape(self):
        tok = PyramidTokenizer(ScaleSchedule.from_string("1x1,2x2,4x4,8x8,16x16"),
                               vocab=256, embed_dim=32, hidden=8, downsample=4)
        features = tok.encode_features(torch.rand(1, 3, 64, 64))
        assert features.shape == (1, 32, 16, 16)

    def test_indivisible_size(self, tiny_tokenizer):
        with pytest.raises(ValueError, match="Dimension mismatch"):
            tiny_tokenizer.encode_features(torch.rand(1, 3, 15, 16))

    def test_deterministic(self, tiny_tokenizer, tiny_images):
        with torch.no_grad():
            a = tiny_tokenizer.encode_features(tiny_images)
            b = tiny_tokenizer.encode_features(tiny_images)
        assert torch.equal(a, b)

    def test_non_power_of_two_factor(self, tiny_schedule):
        with pytest.raises(ValueError, match="power of two"):
            PyramidTokenizer(tiny_schedule, vocab=16, embed_dim=4, hidden=8, downsample=3)


class TestQuantizePyramid:

    def test_exact_match_single_scale(self):
        schedule = ScaleSchedule(((3, 3),))
        codebook = torch.tensor([[0.0, 1.0], [2.0, -1.0], [5.0, 5.0]])
        features = torch.tensor([2.0, -1.0]).view(1, 2, 1, 1).expand(1, 2, 3, 3).contiguous()

        tokens, acc = quantize_pyramid(features, schedule, codebook)

        assert torch.all(tokens[0] == 1)
        assert torch.equal(acc, features)

    def test_single_scale_matches_brute_force(self):
        rng = np.random.default_rng(0)
        schedule = ScaleSchedule(((4, 5),))
        for _ in range(100):
            codebook = rng.normal(size=(12, 3))
            features = rng.normal(size=(2, 3, 4, 5))

            tokens, _ = quantize_pyramid(torch.from_numpy(features), schedule,
                                         torch.from_numpy(codebook))

            cells = features.transpose(0, 2, 3, 1).reshape(-1, 3)
            expected = np.array([
                np.argmin([np.sum((cell - code) ** 2) for code in codebook]) for cell in cells
            ])
            np.testing.assert_array_equal(tokens[0].numpy().reshape(-1), expected)

    def test_ties_go_to_lowest_index(self):
        codebook = torch.tensor([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        vectors = torch.tensor([[0.0, 0.0], [1.0, 0.0]])
        assert nearest_codes(vectors, codebook).tolist() == [0, 0]

    def test_zero_grid(self, tiny_schedule):
        codebook = torch.randn(16, 4)
        codebook[7] = 0.0
        features = torch.zeros(2, 4, 4, 4)

        tokens, acc = quantize_pyramid(features, tiny_schedule, codebook)

        for token_map in tokens:
            assert torch.all(token_map == 7)
        assert torch.count_nonzero(acc) == 0

    def test_round_trip_bit_exact(self, tiny_schedule):
        gen = torch.Generator().manual_seed(3)
        for _ in range(10):
            codebook = torch.randn(16, 4, generator=gen)
            features = torch.randn(3, 4, 4, 4, generator=gen)
            tokens, acc = quantize_pyramid(features, tiny_schedule, codebook)
            assert torch.equal(dequantize_pyramid(tokens, tiny_schedule, codebook), acc)

    def test_shape_mismatch(self, tiny_schedule):
        with pytest.raises(ValueError, match="Shape mismatch"):
            quantize_pyramid(torch.zeros(1, 4, 8, 8), tiny_schedule, torch.randn(16, 4))

    def test_residual_energies_shape(self, tiny_schedule):
        energies = residual_energies(torch.randn(5, 4, 4, 4), tiny_schedule, torch.randn(16, 4))
        assert energies.shape == (5, 3)
        assert torch.all(energies >= 0)


class TestDequantizePyramid:

    def test_single_scale_is_lookup(self):
        schedule = ScaleSchedule(((2, 3),))
        codebook = torch.randn(5, 2)
        tokens = [torch.tensor([[[0, 1, 2], [3, 4, 0]]])]
        assert torch.equal(dequantize_pyramid(tokens, schedule, codebook),
                           lookup(tokens[0], codebook))

    def test_two_scale_hand_computed(self):
        schedule = ScaleSchedule(((1, 1), (2, 2)))
        codebook = torch.tensor([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
        tokens = [torch.tensor([[[0]]]), torch.tensor([[[1, 2], [2, 1]]])]

        out = dequantize_pyramid(tokens, schedule, codebook)

        # the 1x1 map upsamples to a constant (1, 0)
        expected = torch.tensor([
            [[1.0, 4.0], [4.0, 1.0]],
            [[2.0, 3.0], [3.0, 2.0]],
        ]).unsqueeze(0)
        torch.testing.assert_close(out, expected)

    def test_index_out_of_range(self, tiny_schedule):
        tokens = [torch.zeros(1, 1, 1, dtype=torch.long), torch.zeros(1, 2, 2, dtype=torch.long),
                  torch.full((1, 4, 4), 16, dtype=torch.long)]
        with pytest.raises(ValueError, match="Index out of range"):
            dequantize_pyramid(tokens, tiny_schedule, torch.randn(16, 4))


class TestDecodeImage:

    def test_shape_and_range(self, tiny_tokenizer):
        with torch.no_grad():
            images = tiny_tokenizer.decode_image(torch.randn(2, 4, 4, 4) * 50)
        assert images.shape == (2, 3, 16, 16)
        assert images.min() >= 0.0 and images.max() <= 1.0

    def test_gradient_matches_finite_differences(self, tiny_tokenizer):
        decoder = tiny_tokenizer.decoder.double()
        features = torch.randn(1, 4, 2, 2, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda f: decoder(f).mean(), (features,),
                                        eps=1e-6, atol=1e-8, rtol=1e-3)

    def test_wrong_channels(self, tiny_tokenizer):
        with pytest.raises(ValueError, match="Shape mismatch"):
            tiny_tokenizer.decode_image(torch.randn(1, 5, 4, 4))


class TestTokenizeDetokenize:

    def test_pyramid_follows_schedule(self, tiny_tokenizer, tiny_images):
        tokens = tiny_tokenizer.tokenize(tiny_images)
        assert [tuple(t.shape) for t in tokens] == [(4, 1, 1), (4, 2, 2), (4, 4, 4)]
        for t in tokens:
            assert t.min() >= 0 and t.max() < 16

    def test_deterministic(self, tiny_tokenizer, tiny_images):
        a = tiny_tokenizer.tokenize(tiny_images)
        b = tiny_tokenizer.tokenize(tiny_images)
        assert all(torch.equal(x, y) for x, y in zip(a, b))
        assert torch.equal(tiny_tokenizer.detokenize(a), tiny_tokenizer.detokenize(b))

    def test_detokenize_range(self, tiny_tokenizer, tiny_images):
        images = tiny_tokenizer.detokenize(tiny_tokenizer.tokenize(tiny_images))
        assert images.shape == tiny_images.shape
        assert images.min() >= 0.0 and images.max() <= 1.0


class TestTrainingForward:

    def test_losses_and_straight_through_gradient(self, tiny_tokenizer, tiny_images):
        tiny_tokenizer.train()
        out = tiny_tokenizer(tiny_images, torch.Generator().manual_seed(0))
        assert torch.isfinite(out["loss"])
        assert out["recon"].shape == tiny_images.shape

        out["loss"].backward()
        assert tiny_tokenizer.encoder.blocks[0].weight.grad is not None
        assert torch.count_nonzero(tiny_tokenizer.encoder.blocks[0].weight.grad) > 0

    def test_eval_mode_leaves_codebook(self, tiny_tokenizer, tiny_images):
        before = tiny_tokenizer.codebook.clone()
        tiny_tokenizer(tiny_images)
        assert torch.equal(tiny_tokenizer.codebook, before)


class TestPyramidQuantizer:

    def test_dead_codes_reseeded_from_batch(self):
        quantizer = PyramidQuantizer(vocab=4, embed_dim=2, num_scales=1, seed=0)
        vectors = torch.randn(1, 2, 3, 3)
        tokens = [torch.zeros(1, 3, 3, dtype=torch.long)]

        reseeded = quantizer.ema_update(tokens, [vectors], torch.Generator().manual_seed(0))

        assert reseeded == 3
        batch = vectors.permute(0, 2, 3, 1).reshape(-1, 2)
        for row in quantizer.codebook[1:]:
            assert any(torch.equal(row, v) for v in batch)

    def test_usage_statistics(self):
        quantizer = PyramidQuantizer(vocab=4, embed_dim=2, num_scales=2, seed=0)
        tokens = [torch.zeros(1, 1, 1, dtype=torch.long),
                  torch.tensor([[[0, 1], [2, 3]]])]
        residuals = [torch.randn(1, 2, 1, 1), torch.randn(1, 2, 2, 2)]
        quantizer.ema_update(tokens, residuals)

        assert quantizer.active_fraction() == 1.0
        assert quantizer.usage_per_scale() == [0.25, 1.0]


class TestResidualEnergy:

    def test_non_increasing_after_training(self, tiny_config):
        gen = ToyImageGenerator(size=16, seed=3)
        train = images_to_tensor(gen.images(8))
        held_out = images_to_tensor([gen.image(i) for i in range(100, 108)])
        cfg = dataclasses.replace(
            tiny_config, tokenizer=dataclasses.replace(tiny_config.tokenizer, batch_size=4)
        )
        model = train_tokenizer(train, cfg, steps=40, progress=False).model

        with torch.no_grad():
            energies = residual_energies(model.encode_features(held_out), model.schedule,
                                         model.codebook)
        non_increasing = (energies.diff(dim=1) <= 1e-6).all(dim=1)
        assert non_increasing.float().mean().item() >= 0.9
