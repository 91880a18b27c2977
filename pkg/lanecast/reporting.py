"""Small reporting helpers shared by the CLI subcommands."""

import logging
import os
from pathlib import Path
from typing import Iterable, List

import pandas as pd

from lanecast.errors import ParseError

logger = logging.getLogger(__name__)

KEY_COLUMNS = ["variant", "metric"]
METRIC_ORDER = {"ADE": 0, "FDE": 1}


def horizon_columns(columns: Iterable[str]) -> List[str]:
    """Horizon columns ("1s", "2s", ...) in numeric order."""
    found = [c for c in columns if isinstance(c, str) and c.endswith("s") and c[:-1].isdigit()]
    return sorted(found, key=lambda c: int(c[:-1]))


def read_report(path: Path) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ParseError(f"{path}: unreadable report ({exc})") from exc
    missing = [c for c in KEY_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(f"{path}: missing report columns {', '.join(missing)}")
    return frame


def merge_report(existing: pd.DataFrame, new_rows: pd.DataFrame) -> pd.DataFrame:
    """
    Replace rows of ``existing`` that share a (variant, metric) key with
    ``new_rows`` and append the rest.

    Output is sorted by variant then ADE before FDE; horizon columns are ordered
    numerically and agents come last.
    """
    if existing is None or existing.empty:
        merged = new_rows.copy()
    else:
        keys = set(map(tuple, new_rows[KEY_COLUMNS].astype(str).values.tolist()))
        keep = ~existing[KEY_COLUMNS].astype(str).apply(tuple, axis=1).isin(keys)
        merged = pd.concat([existing[keep], new_rows], ignore_index=True)

    merged["_metric_rank"] = merged["metric"].map(METRIC_ORDER).fillna(len(METRIC_ORDER))
    merged = merged.sort_values(["variant", "_metric_rank"], kind="mergesort").drop(columns="_metric_rank")
    others = [c for c in merged.columns if c not in KEY_COLUMNS and c not in horizon_columns(merged.columns)]
    return merged[KEY_COLUMNS + horizon_columns(merged.columns) + others].reset_index(drop=True)


def write_report(path: Path, new_rows: pd.DataFrame) -> pd.DataFrame:
    """Merge ``new_rows`` into the CSV at ``path`` (created if absent); written atomically."""
    path = Path(path)
    existing = read_report(path) if path.exists() else None
    merged = merge_report(existing, new_rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(path.name + ".tmp")
    merged.to_csv(temp_path, index=False, float_format="%.6f")
    os.replace(temp_path, path)
    logger.info("Report %s now holds %d rows", path, len(merged))
    return merged


def format_report(frame: pd.DataFrame) -> str:
    """Plain-text table for the console, errors in metres with 3 decimals."""
    if frame.empty:
        return "(empty report)"
    shown = frame.copy()
    for column in horizon_columns(shown.columns):
        shown[column] = shown[column].map(lambda v: f"{v:.3f}")
    return shown.to_string(index=False)
