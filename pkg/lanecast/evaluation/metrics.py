"""
ADE / FDE at 1-6 s horizons.

Horizon h seconds covers frames 1..2h after the current frame (2 Hz); the
current frame itself is never scored.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from lanecast.config import HORIZONS_S, frames_for_horizon
from lanecast.errors import EmptyDataset, HorizonTooLong

logger = logging.getLogger(__name__)

METRICS = ("ADE", "FDE")


def _check(pred: np.ndarray, gt: np.ndarray, h_frames: int) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if h_frames < 1 or h_frames > pred.shape[-2]:
        raise HorizonTooLong(f"horizon of {h_frames} frames but only {pred.shape[-2]} predicted")


def ade(pred: np.ndarray, gt: np.ndarray, h_frames: int) -> float:
    """Mean Euclidean error over frames 1..h_frames."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check(pred, gt, h_frames)
    return float(np.linalg.norm(pred[:h_frames] - gt[:h_frames], axis=-1).mean())


def fde(pred: np.ndarray, gt: np.ndarray, h_frames: int) -> float:
    """Euclidean error at frame h_frames."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check(pred, gt, h_frames)
    return float(np.linalg.norm(pred[h_frames - 1] - gt[h_frames - 1]))


@dataclass(frozen=True)
class HorizonReport:
    """Mean ADE / FDE per horizon (seconds) over ``agent_count`` agents."""
    ade: Dict[int, float]
    fde: Dict[int, float]
    agent_count: int

    def __post_init__(self):
        if self.agent_count <= 0:
            raise EmptyDataset("a horizon report needs at least one agent")

    @property
    def horizons(self) -> List[int]:
        return sorted(self.ade)

    def to_dataframe(self, variant: str) -> pd.DataFrame:
        """One row per metric with columns variant, metric, 1s..6s, agents."""
        rows = []
        for metric, values in (("ADE", self.ade), ("FDE", self.fde)):
            row = {"variant": variant, "metric": metric}
            row.update({f"{h}s": values[h] for h in self.horizons})
            row["agents"] = self.agent_count
            rows.append(row)
        return pd.DataFrame(rows)


def horizon_report(pred: np.ndarray, gt: np.ndarray, horizons: Sequence[int] = HORIZONS_S) -> HorizonReport:
    """Vectorised report over (N, F, 2) predicted and ground-truth paths."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if len(pred) == 0:
        raise EmptyDataset("no agents to evaluate")
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    errors = np.linalg.norm(pred - gt, axis=-1)
    ade_h, fde_h = {}, {}
    for h in horizons:
        frames = frames_for_horizon(h)
        if frames > errors.shape[1]:
            raise HorizonTooLong(f"{h}s needs {frames} frames, only {errors.shape[1]} predicted")
        ade_h[h] = float(errors[:, :frames].mean(axis=1).mean())
        fde_h[h] = float(errors[:, frames - 1].mean())
    return HorizonReport(ade_h, fde_h, len(pred))


def available_horizons(horizon_frames: int) -> List[int]:
    return [h for h in HORIZONS_S if frames_for_horizon(h) <= horizon_frames]


def evaluate(model, samples) -> HorizonReport:
    """Score the selected path of every sample at every horizon the model covers."""
    if len(samples) == 0:
        raise EmptyDataset("evaluation set is empty")
    prediction = model.predict_batch(samples)
    horizons = available_horizons(samples.future.shape[1])
    report = horizon_report(prediction.selected_trajectories(), samples.future, horizons)
    logger.info("Evaluated %d agents: FDE@%ds %.3f m", report.agent_count, horizons[-1], report.fde[horizons[-1]])
    return report
