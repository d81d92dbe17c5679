import math

import pytest
import torch

from src.distill import build_student
from src.runtime import (
    restore_one_step,
    sample_from_logits,
    sample_teacher,
    zero_shot_upsample,
)


@pytest.fixture
def tiny_student(tiny_teacher, tiny_config):
    return build_student(tiny_teacher, tiny_config).eval()


class TestRestoreOneStep:

    def test_single_forward_pass(self, tiny_student, tiny_tokenizer, tiny_images):
        images, report = restore_one_step(tiny_images, tiny_student, tiny_tokenizer)
        assert report.forward_pass_count == 1
        assert images.shape == tiny_images.shape
        assert images.min() >= 0.0 and images.max() <= 1.0

    def test_deterministic(self, tiny_student, tiny_tokenizer, tiny_images):
        a, _ = restore_one_step(tiny_images, tiny_student, tiny_tokenizer)
        b, _ = restore_one_step(tiny_images, tiny_student, tiny_tokenizer)
        assert torch.equal(a, b)

    def test_report_fields(self, tiny_student, tiny_tokenizer, tiny_images):
        _, report = restore_one_step(tiny_images, tiny_student, tiny_tokenizer,
                                     checkpoint_ids={"student": "abc", "tokenizer": "def"})
        record = report.to_dict()
        assert record["schedule"] == "1x1,2x2,4x4"
        assert record["student_id"] == "abc"
        assert record["tokenizer_id"] == "def"
        assert record["wall_ms"] >= record["transformer_ms"] >= 0.0


class TestSampleFromLogits:

    def test_low_temperature_is_argmax(self):
        logits = torch.randn(2, 3, 3, 10, generator=torch.Generator().manual_seed(0))
        assert torch.equal(sample_from_logits(logits, 1e-6), logits.argmax(dim=-1))

    @pytest.mark.parametrize("temperature", [0.0, -1.0, float("nan")])
    def test_non_positive_temperature(self, temperature):
        with pytest.raises(ValueError, match="Temperature must be positive"):
            sample_from_logits(torch.zeros(1, 1, 1, 4), temperature)

    def test_top_one_is_argmax(self):
        logits = torch.randn(4, 2, 2, 8, generator=torch.Generator().manual_seed(1))
        draws = sample_from_logits(logits, 1.0, torch.Generator().manual_seed(0), top_k=1)
        assert torch.equal(draws, logits.argmax(dim=-1))

    def test_frequencies_match_softmax(self):
        probs = torch.tensor([0.1, 0.2, 0.3, 0.4])
        n = 10000
        logits = torch.log(probs).view(1, 1, 1, 4).expand(n, 1, 1, 4)

        draws = sample_from_logits(logits, 1.0, torch.Generator().manual_seed(0))

        counts = torch.bincount(draws.reshape(-1), minlength=4).double() / n
        for p, freq in zip(probs.tolist(), counts.tolist()):
            sigma = math.sqrt(p * (1 - p) / n)
            assert abs(freq - p) < 4 * sigma


class TestSampleTeacher:

    def test_one_pass_per_scale(self, tiny_teacher, tiny_schedule):
        tokens, report = sample_teacher(tiny_teacher, n=3, seed=0)
        assert report.forward_pass_count == len(tiny_schedule)
        assert [tuple(t.shape) for t in tokens] == [(3, 1, 1), (3, 2, 2), (3, 4, 4)]
        for t in tokens:
            assert t.min() >= 0 and t.max() < 16

    def test_seeded(self, tiny_teacher):
        a, _ = sample_teacher(tiny_teacher, n=2, seed=5)
        b, _ = sample_teacher(tiny_teacher, n=2, seed=5)
        assert all(torch.equal(x, y) for x, y in zip(a, b))

    def test_invalid_arguments(self, tiny_teacher):
        with pytest.raises(ValueError):
            sample_teacher(tiny_teacher, n=1, temperature=0.0)
        with pytest.raises(ValueError):
            sample_teacher(tiny_teacher, n=0)


class TestZeroShotUpsample:

    @pytest.mark.parametrize("s", [1, 2])
    def test_prefix_kept_and_passes(self, s, tiny_teacher, tiny_tokenizer, tiny_images):
        images, tokens, report = zero_shot_upsample(tiny_images, s, tiny_teacher, tiny_tokenizer,
                                                    seed=0)
        lq_tokens = tiny_tokenizer.tokenize(tiny_images)
        for k in range(s):
            assert torch.equal(tokens[k], lq_tokens[k])
        assert report.forward_pass_count == 3 - s
        assert images.shape == tiny_images.shape

    def test_seeded(self, tiny_teacher, tiny_tokenizer, tiny_images):
        a, _, _ = zero_shot_upsample(tiny_images, 1, tiny_teacher, tiny_tokenizer, seed=3)
        b, _, _ = zero_shot_upsample(tiny_images, 1, tiny_teacher, tiny_tokenizer, seed=3)
        assert torch.equal(a, b)

    @pytest.mark.parametrize("s", [0, 3])
    def test_scale_out_of_range(self, s, tiny_teacher, tiny_tokenizer, tiny_images):
        with pytest.raises(ValueError, match="1 <= s < 3"):
            zero_shot_upsample(tiny_images, s, tiny_teacher, tiny_tokenizer)
