import math

import pytest
import pandas as pd
import torch

from src.bench import SpeedReport, arm_config, benchmark_speed, parse_arms, run_ablation
from src.distill import build_student
from src.runconfig import config_diff, config_hash


@pytest.fixture
def tiny_student(tiny_teacher, tiny_config):
    return build_student(tiny_teacher, tiny_config).eval()


class TestBenchmarkSpeed:

    def test_pass_counts(self, tiny_student, tiny_teacher, tiny_tokenizer, tiny_images):
        threads = torch.get_num_threads()
        report = benchmark_speed(tiny_student, tiny_teacher, tiny_tokenizer, tiny_images[:3],
                                 warmup=1, cfg_hash="abc")
        assert report.student_passes == 1
        assert report.teacher_passes == 3
        assert report.images == 3
        assert report.num_scales == 3
        assert 0.0 < report.trainable_fraction < 1.0
        assert torch.get_num_threads() == threads

        frame = report.to_frame()
        assert frame.loc[0, "config_hash"] == "abc"
        assert "speedup" in frame.columns

    def test_too_few_images(self, tiny_student, tiny_teacher, tiny_tokenizer, tiny_images):
        with pytest.raises(ValueError, match="at least 3 images"):
            benchmark_speed(tiny_student, tiny_teacher, tiny_tokenizer, tiny_images[:2])


class TestSpeedReport:

    def test_speedup(self):
        report = SpeedReport(images=3, num_scales=5, student_passes=1, teacher_passes=5,
                             student_ms=2.0, teacher_ms=10.0, tokenizer_ms=1.0,
                             trainable_fraction=0.01)
        assert report.speedup == 5.0


class TestArms:

    def test_parse_arms(self):
        assert parse_arms("full, no_kl") == ["full", "no_kl"]

    def test_unknown_arm(self):
        with pytest.raises(ValueError, match="Unknown arm"):
            parse_arms("full,no_teacher")

    def test_empty(self):
        with pytest.raises(ValueError):
            parse_arms(" , ")

    @pytest.mark.parametrize("arm,key", [
        ("causal_mask", "distill.mask_mode"),
        ("no_kl", "loss.lambda_kl"),
        ("multi_step_conditioned", "distill.one_step"),
        ("no_prerestorer", "distill.use_prerestorer"),
    ])
    def test_single_key_diff(self, arm, key, tiny_config):
        arm_cfg = arm_config(tiny_config, arm)
        assert config_diff(tiny_config, arm_cfg) == [key]
        assert config_hash(arm_cfg) != config_hash(tiny_config)

    def test_full_is_unchanged(self, tiny_config):
        assert arm_config(tiny_config, "full") == tiny_config


class TestRunAblation:

    def test_two_arms(self, tiny_teacher, tiny_tokenizer, tiny_images, tiny_config):
        hq, lq = tiny_images[:2], tiny_images[:2] * 0.8
        table = run_ablation(tiny_config, ["full", "multi_step_conditioned"], tiny_teacher,
                             tiny_tokenizer, hq, lq, tiny_images[2:], tiny_images[2:] * 0.8,
                             steps=1)

        assert list(table["arm"]) == ["full", "multi_step_conditioned"]
        for column in ("psnr", "ssim", "psnr_lq", "ssim_lq"):
            assert all(math.isfinite(v) for v in table[column])
        assert table.loc[0, "config_diff"] == ""
        assert table.loc[1, "config_diff"] == "distill.one_step"
        assert (table["seed"] == tiny_config.run.seed).all()

    def test_rerun_is_identical(self, tiny_teacher, tiny_tokenizer, tiny_images, tiny_config):
        hq, lq = tiny_images[:2], tiny_images[:2] * 0.8
        arms = ["full", "causal_mask", "no_kl", "multi_step_conditioned"]

        def run():
            return run_ablation(tiny_config, arms, tiny_teacher, tiny_tokenizer, hq, lq,
                                tiny_images[2:], tiny_images[2:] * 0.8, steps=1)

        pd.testing.assert_frame_equal(run(), run(), check_exact=True)
