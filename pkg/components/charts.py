from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

LOSS_COLUMNS = ("kl", "perc", "mse", "total", "restorer", "rec_loss", "commit_loss", "ce")


def plot_loss_curve(history: pd.DataFrame, path, title: str = "Training loss") -> Path:
    """
    Plot every known loss column of a training log against the step.

    Args:
        history: Loss log with a 'step' column
        path: PNG destination
    """
    columns = [c for c in LOSS_COLUMNS if c in history.columns]
    if "step" not in history.columns or not columns:
        raise ValueError("Loss log needs a 'step' column and at least one loss column")

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for column in columns:
        ax.plot(history["step"], history[column], label=column, linewidth=1.2)
    ax.set_xlabel("Step")
    ax.set_ylabel("Loss")
    ax.set_yscale("log" if (history[columns] > 0).all().all() else "linear")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(table: pd.DataFrame, path) -> Path:
    """
    Side-by-side PSNR and SSIM bars per ablation arm, LQ baseline dashed.
    """
    if table.empty:
        raise ValueError("Ablation table is empty")

    fig, (ax_psnr, ax_ssim) = plt.subplots(1, 2, figsize=(10, 4))
    x = np.arange(len(table))
    for ax, metric, unit in ((ax_psnr, "psnr", "dB"), (ax_ssim, "ssim", "")):
        ax.bar(x, table[metric], color="#4c78a8")
        ax.axhline(table[f"{metric}_lq"].mean(), color="#e45756", linestyle="--",
                   linewidth=1.5, label="LQ input")
        ax.set_xticks(x)
        ax.set_xticklabels(table["arm"], rotation=30, ha="right")
        ax.set_ylabel(f"{metric.upper()} {unit}".strip())
        ax.grid(True, axis="y", alpha=0.3)
        ax.legend()
    fig.tight_layout()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
