import io

import pytest
import pandas as pd

from components.arguments import build_parser, parse_float_list, parse_int_list
from components.charts import plot_ablation, plot_loss_curve
from components.error_display import display_runtime_error, display_validation_error


class TestArguments:

    def test_global_flags_before_subcommand(self):
        args = build_parser().parse_args(["--seed", "3", "sample", "--teacher", "t", "--tokenizer",
                                          "k", "--n", "2", "--out", "o", "--top-k", "5"])
        assert args.seed == 3
        assert args.command == "sample"
        assert args.top_k == 5

    def test_ablate_defaults_to_every_arm(self):
        args = build_parser().parse_args(["ablate", "--teacher", "t", "--tokenizer", "k",
                                          "--out", "a.csv"])
        assert args.arms.split(",")[0] == "full"
        assert len(args.arms.split(",")) == 5

    def test_lists(self):
        assert parse_float_list("0.5, 2", "--sigma-range") == (0.5, 2.0)
        assert parse_int_list("1,2,3", "--s") == (1, 2, 3)
        with pytest.raises(ValueError, match="--s"):
            parse_int_list("1,x", "--s")


class TestErrorDisplay:

    def test_one_line(self):
        stream = io.StringIO()
        display_runtime_error(ValueError("bad schedule\nsecond line"), stream)
        assert stream.getvalue() == "error: ValueError: bad schedule\n"

    def test_validation(self):
        stream = io.StringIO()
        display_validation_error("--seed must be non-negative", stream)
        assert stream.getvalue().startswith("error: --seed")


class TestCharts:

    def test_loss_curve(self, tmp_path):
        log = pd.DataFrame({"step": [1, 2, 3], "kl": [0.5, 0.4, 0.3], "mse": [0.1, 0.09, 0.08]})
        path = plot_loss_curve(log, tmp_path / "curve.png")
        assert path.stat().st_size > 0

    def test_loss_curve_needs_losses(self, tmp_path):
        with pytest.raises(ValueError):
            plot_loss_curve(pd.DataFrame({"step": [1]}), tmp_path / "curve.png")

    def test_ablation(self, tmp_path):
        table = pd.DataFrame({"arm": ["full", "no_kl"], "psnr": [25.0, 24.0], "ssim": [0.8, 0.7],
                              "psnr_lq": [22.0, 22.0], "ssim_lq": [0.6, 0.6]})
        assert plot_ablation(table, tmp_path / "bars.png").is_file()
