import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Set

import pandas as pd

from .metrics import MetricReport

logger = logging.getLogger(__name__)

PAIR_COLUMNS = [
    "hq_path", "lq_path", "blur_sigma", "downsample_factor", "noise_sigma",
    "jpeg_quality", "seed", "impulse_amount", "config_hash",
]


def export_pairs_to_csv(records: List[dict], config_hash: str) -> pd.DataFrame:
    """
    Paired-dataset manifest, one row per (HQ, LQ) pair.

    Args:
        records: Output of make_pairs
        config_hash: Hash of the producing config, stamped on every row

    Returns:
        DataFrame with PAIR_COLUMNS in order
    """
    df = pd.DataFrame(records, columns=PAIR_COLUMNS[:-1])
    df["config_hash"] = config_hash
    return df[PAIR_COLUMNS]


def read_manifest(path) -> pd.DataFrame:
    """
    Load a paired manifest.

    jpeg_quality stays a string column so the "lossless" sentinel survives.
    """
    path = Path(path)
    if not path.is_file():
        raise ValueError(f"Manifest not found: {path}")
    df = pd.read_csv(path, dtype={"jpeg_quality": str, "config_hash": str})
    missing = [column for column in PAIR_COLUMNS if column not in df.columns]
    if missing:
        raise ValueError(f"Manifest {path} is missing column(s): {missing}")
    if df.empty:
        raise ValueError(f"Manifest {path} has no rows")
    return df


def manifest_hashes(df: pd.DataFrame) -> Set[str]:
    if "config_hash" not in df.columns:
        return set()
    return {str(h) for h in df["config_hash"].dropna().unique()}


def export_history_to_csv(history: List[dict], config_hash: str) -> pd.DataFrame:
    """Per-step loss log of a training run."""
    if not history:
        raise ValueError("Training history is empty")
    df = pd.DataFrame(history)
    df["config_hash"] = config_hash
    return df


def export_metrics_to_csv(report: MetricReport) -> pd.DataFrame:
    """
    Per-image metric rows followed by a single 'mean' row.
    """
    per_image = report.per_image.copy()
    means = {"image": "mean", **report.means}
    df = pd.concat([per_image, pd.DataFrame([means])], ignore_index=True)
    df["config_hash"] = report.config_hash
    return df


def export_reports_to_csv(rows: List[dict], config_hash: str) -> pd.DataFrame:
    """Restore/zero-shot reports, one row per output image or per run."""
    df = pd.DataFrame(rows)
    df["config_hash"] = config_hash
    return df


def export_parameters_to_json(config: dict, extra: Optional[Dict] = None) -> str:
    """
    Config snapshot plus run metadata as indented JSON.
    """
    export_data = {
        "timestamp": datetime.now().isoformat(),
        "config": config,
        **(extra or {}),
    }
    return json.dumps(export_data, indent=2, sort_keys=True)


def write_table(df: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info("Wrote %d rows to %s", len(df), path)
    return path
