import math

import pytest
import numpy as np
import torch

from src.training import (
    NonFiniteLossError,
    batch_indices,
    check_finite,
    next_scale_loss,
    teacher_cross_entropy,
    tokenize_dataset,
    train_teacher,
    train_tokenizer,
)


class TestBatchIndices:

    def test_distinct_and_sorted(self):
        idx = batch_indices(10, 4, seed=0, step=3)
        assert len(set(idx.tolist())) == 4
        assert list(idx) == sorted(idx)

    def test_replayable(self):
        assert np.array_equal(batch_indices(50, 8, 1, 2), batch_indices(50, 8, 1, 2))

    def test_small_dataset(self):
        assert batch_indices(3, 16, 0, 1).tolist() == [0, 1, 2]


class TestCheckFinite:

    def test_names_every_term(self):
        with pytest.raises(NonFiniteLossError, match="step 4: rec=nan, commit=0.5"):
            check_finite(4, rec=float("nan"), commit=0.5)

    def test_finite_passes(self):
        check_finite(1, a=0.0, b=1e9)


class TestTrainTokenizer:

    def test_one_step(self, tiny_images, tiny_config):
        result = train_tokenizer(tiny_images, tiny_config, steps=1, progress=False)
        assert result.checkpoint.kind == "tokenizer"
        assert result.checkpoint.step == 1
        assert result.checkpoint.schedule == "1x1,2x2,4x4"
        assert math.isfinite(result.history[0]["loss"])
        assert not result.model.training

    def test_seeded(self, tiny_images, tiny_config):
        a = train_tokenizer(tiny_images, tiny_config, steps=2, progress=False)
        b = train_tokenizer(tiny_images, tiny_config, steps=2, progress=False)
        assert [r["loss"] for r in a.history] == [r["loss"] for r in b.history]
        assert torch.equal(a.model.codebook, b.model.codebook)

    def test_empty_dataset(self, tiny_config):
        with pytest.raises(ValueError, match="empty"):
            train_tokenizer(torch.zeros(0, 3, 16, 16), tiny_config, progress=False)


class TestTokenizeDataset:

    def test_chunking_is_invisible(self, tiny_tokenizer, tiny_images):
        whole = tiny_tokenizer.tokenize(tiny_images)
        chunked = tokenize_dataset(tiny_tokenizer, tiny_images, chunk=3)
        assert all(torch.equal(a, b) for a, b in zip(whole, chunked))


class TestTrainTeacher:

    def test_one_step(self, tiny_tokenizer, tiny_images, tiny_config):
        tokens = tokenize_dataset(tiny_tokenizer, tiny_images)
        result = train_teacher(tokens, tiny_tokenizer, tiny_config, steps=1,
                               tokenizer_id="abc", progress=False)
        assert result.checkpoint.kind == "teacher"
        assert result.checkpoint.step == 1
        assert result.checkpoint.meta["tokenizer_id"] == "abc"
        assert math.isfinite(result.history[0]["ce"])
        assert not any(p.requires_grad for p in result.model.parameters())

    def test_empty_corpus(self, tiny_tokenizer, tiny_config):
        with pytest.raises(ValueError, match="empty"):
            train_teacher([], tiny_tokenizer, tiny_config, progress=False)


class TestNextScaleLoss:

    def test_uniform_logits(self):
        logits = [torch.zeros(2, 1, 1, 8), torch.zeros(2, 2, 2, 8)]
        tokens = [torch.zeros(2, 1, 1, dtype=torch.long), torch.ones(2, 2, 2, dtype=torch.long)]
        assert next_scale_loss(logits, tokens).item() == pytest.approx(math.log(8))

    def test_cross_entropy_matches_single_batch(self, tiny_teacher, tiny_tokenizer, tiny_images):
        tokens = tiny_tokenizer.tokenize(tiny_images)
        with torch.no_grad():
            expected = next_scale_loss(tiny_teacher.teacher_forward(tokens), tokens).item()
        assert teacher_cross_entropy(tiny_teacher, tokens, batch_size=2) == pytest.approx(expected,
                                                                                           rel=1e-5)
