import dataclasses

import pytest
import numpy as np
import pandas as pd

from app import main
from config.settings import OUTPUT_ROOT_ENV
from src.runconfig import RunConfig, save_config
from src.utils import save_image


def tiny_run_config() -> RunConfig:
    cfg = RunConfig()
    return dataclasses.replace(
        cfg,
        run=dataclasses.replace(cfg.run, workers=1, log_every=1),
        tokenizer=dataclasses.replace(
            cfg.tokenizer, image_size=16, downsample=4, embed_dim=4, vocab=16, hidden=8,
            schedule="1x1,2x2,4x4", steps=1, batch_size=2,
        ),
        backbone=dataclasses.replace(cfg.backbone, layers=1, model_dim=16, heads=2),
        teacher=dataclasses.replace(cfg.teacher, steps=1, batch_size=2),
        adapter=dataclasses.replace(cfg.adapter, rank=2),
        distill=dataclasses.replace(cfg.distill, steps=1, batch_size=2, restorer_channels=4),
        sampling=dataclasses.replace(cfg.sampling, zero_shot_scale=1),
        eval=dataclasses.replace(cfg.eval, warmup=1),
    )


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the toy pipeline once end to end and hand back its directory."""
    root = tmp_path_factory.mktemp("pipeline")
    mp = pytest.MonkeyPatch()
    mp.delenv(OUTPUT_ROOT_ENV, raising=False)
    config = str(save_config(tiny_run_config(), root / "tiny.ini"))

    def run(*argv):
        return main(["--config", config, *[str(a) for a in argv]])

    codes = {
        "gen-data": run("gen-data", "--n", 4, "--size", 16, "--out", root / "hq"),
        "degrade": run("degrade", "--input", root / "hq", "--output", root / "lq", "--lossless"),
        "train-tokenizer": run("train-tokenizer", "--data", root / "hq",
                               "--out", root / "ckpt" / "tokenizer.ckpt"),
        "train-teacher": run("train-teacher", "--data", root / "hq",
                             "--tokenizer", root / "ckpt" / "tokenizer.ckpt",
                             "--out", root / "ckpt" / "teacher.ckpt"),
        "distill": run("distill", "--teacher", root / "ckpt" / "teacher.ckpt",
                       "--tokenizer", root / "ckpt" / "tokenizer.ckpt",
                       "--pairs", root / "lq" / "manifest.csv",
                       "--out", root / "ckpt" / "student.ckpt"),
        "restore": run("restore", "--lq", root / "lq", "--student", root / "ckpt" / "student.ckpt",
                       "--tokenizer", root / "ckpt" / "tokenizer.ckpt", "--out", root / "restored"),
        "evaluate": run("evaluate", "--pairs", root / "lq" / "manifest.csv",
                        "--restored", root / "restored", "--out", root / "metrics.csv"),
    }
    yield root, run, codes
    mp.undo()


class TestUsage:

    def test_no_arguments(self):
        assert main([]) == 2

    def test_unknown_subcommand(self):
        assert main(["paint"]) == 2

    def test_missing_required_flag(self):
        assert main(["gen-data", "--n", "2"]) == 2

    def test_negative_seed(self, tmp_path):
        assert main(["--seed", "-1", "gen-data", "--n", "1", "--out", str(tmp_path)]) == 2

    def test_bad_config_file(self, tmp_path):
        config = tmp_path / "bad.ini"
        config.write_text("[loss]\nlamda_kl = 0.1\n")
        assert main(["--config", str(config), "gen-data", "--n", "1", "--out", str(tmp_path)]) == 1


class TestPipeline:

    def test_every_stage_succeeds(self, pipeline):
        _, _, codes = pipeline
        assert codes == {stage: 0 for stage in codes}

    def test_artifacts(self, pipeline):
        root, _, _ = pipeline
        assert len(list((root / "hq").glob("*.png"))) == 4
        assert len(list((root / "restored").glob("*.png"))) == 4
        assert (root / "ckpt" / "student_loss_log.csv").is_file()
        assert (root / "ckpt" / "student_loss_curve.png").is_file()
        assert (root / "ckpt" / "teacher_run.json").is_file()
        assert not (root / "restored" / ".lock").exists()

    def test_one_pass_per_restored_image(self, pipeline):
        root, _, _ = pipeline
        report = pd.read_csv(root / "restored" / "report.csv")
        assert (report["forward_pass_count"] == 1).all()

    def test_metric_table(self, pipeline):
        root, _, _ = pipeline
        metrics = pd.read_csv(root / "metrics.csv")
        assert list(metrics["image"])[-1] == "mean"
        assert len(metrics) == 5

    def test_sample_and_zeroshot(self, pipeline):
        root, run, _ = pipeline
        ckpt = root / "ckpt"
        assert run("sample", "--teacher", ckpt / "teacher.ckpt", "--tokenizer", ckpt / "tokenizer.ckpt",
                   "--n", 2, "--out", root / "samples") == 0
        assert run("zeroshot", "--lq", root / "lq", "--s", "1,2", "--teacher", ckpt / "teacher.ckpt",
                   "--tokenizer", ckpt / "tokenizer.ckpt", "--out", root / "zeroshot") == 0

        report = pd.read_csv(root / "zeroshot" / "report.csv")
        assert list(report["forward_pass_count"]) == [2, 1]
        assert len(list((root / "zeroshot" / "s2").glob("*.png"))) == 4

    def test_bench(self, pipeline):
        root, run, _ = pipeline
        ckpt = root / "ckpt"
        assert run("bench", "--student", ckpt / "student.ckpt", "--teacher", ckpt / "teacher.ckpt",
                   "--tokenizer", ckpt / "tokenizer.ckpt", "--pairs", root / "lq" / "manifest.csv",
                   "--n", 3, "--out", root / "speed.csv") == 0
        speed = pd.read_csv(root / "speed.csv")
        assert speed.loc[0, "student_passes"] == 1
        assert speed.loc[0, "teacher_passes"] == 3

    def test_ablate(self, pipeline):
        root, run, _ = pipeline
        ckpt = root / "ckpt"
        manifest = root / "lq" / "manifest.csv"
        assert run("ablate", "--arms", "full,no_kl", "--teacher", ckpt / "teacher.ckpt",
                   "--tokenizer", ckpt / "tokenizer.ckpt", "--pairs", manifest,
                   "--holdout", manifest, "--out", root / "ablation.csv", "--steps", 1) == 0
        table = pd.read_csv(root / "ablation.csv")
        assert list(table["arm"]) == ["full", "no_kl"]

    def test_evaluate_refuses_other_config(self, pipeline):
        root, run, _ = pipeline
        args = ["evaluate", "--pairs", root / "lq" / "manifest.csv",
                "--restored", root / "restored", "--out", root / "metrics_other.csv"]
        assert run("--seed", 9, *args) == 1
        assert run("--seed", 9, *args, "--force") == 0

    def test_wrong_checkpoint_kind(self, pipeline):
        root, run, _ = pipeline
        ckpt = root / "ckpt"
        assert run("restore", "--lq", root / "lq", "--student", ckpt / "teacher.ckpt",
                   "--tokenizer", ckpt / "tokenizer.ckpt", "--out", root / "bad") == 1

    def test_locked_output(self, pipeline):
        root, run, _ = pipeline
        out = root / "locked"
        out.mkdir()
        (out / ".lock").write_text("1234")
        assert run("gen-data", "--n", 1, "--size", 16, "--out", out) == 1

    def test_degrade_lists_unreadable_images(self, pipeline, capsys):
        root, run, _ = pipeline
        source = root / "mixed"
        source.mkdir()
        save_image(np.full((16, 16, 3), 0.5, dtype=np.float32), source / "good.png")
        (source / "broken.png").write_bytes(b"not an image")

        assert run("degrade", "--input", source, "--output", root / "mixed_lq", "--lossless") == 1

        manifest = pd.read_csv(root / "mixed_lq" / "manifest.csv")
        assert [name.split("/")[-1] for name in manifest["hq_path"]] == ["good.png"]
        stderr = capsys.readouterr().err
        assert str(source / "broken.png") in stderr
        assert "1 of 2 images unreadable" in stderr

    def test_evaluate_output_is_reproducible(self, pipeline):
        root, run, _ = pipeline
        args = ["evaluate", "--pairs", root / "lq" / "manifest.csv",
                "--restored", root / "restored", "--force"]
        assert run("--seed", 7, *args, "--out", root / "eval7_a.csv") == 0
        assert run("--seed", 7, *args, "--out", root / "eval7_b.csv") == 0
        assert (root / "eval7_a.csv").read_bytes() == (root / "eval7_b.csv").read_bytes()

    @pytest.mark.parametrize("command", ["evaluate", "bench"])
    def test_report_commands_respect_lock(self, pipeline, command):
        root, run, _ = pipeline
        ckpt = root / "ckpt"
        out = root / f"locked_{command}"
        out.mkdir()
        (out / ".lock").write_text("1234")
        manifest = root / "lq" / "manifest.csv"
        if command == "evaluate":
            argv = ["evaluate", "--pairs", manifest, "--restored", root / "restored"]
        else:
            argv = ["bench", "--student", ckpt / "student.ckpt", "--teacher", ckpt / "teacher.ckpt",
                    "--tokenizer", ckpt / "tokenizer.ckpt", "--pairs", manifest, "--n", 3]
        assert run(*argv, "--out", out / "table.csv") == 1
        assert not (out / "table.csv").exists()
