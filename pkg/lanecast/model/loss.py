"""Combined trajectory / lane loss: alpha * MSE + (1 - alpha) * CE."""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from lanecast.errors import MaskedGroundTruthLane, ShapeMismatch
from lanecast.numerics import tensor as T
from lanecast.numerics.tensor import Tensor


@dataclass(frozen=True)
class LossValue:
    total: float
    mse_part: float
    ce_part: float


def _check_gt_lane(mask: np.ndarray, gt_lane: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool).reshape(-1, 3)
    gt_lane = np.asarray(gt_lane, dtype=np.int64).reshape(-1)
    bad = np.flatnonzero(~mask[np.arange(len(gt_lane)), gt_lane])
    if len(bad):
        raise MaskedGroundTruthLane(f"ground-truth lane is masked for sample(s) {bad.tolist()}")


def compute_loss(pred, gt_future: np.ndarray, gt_lane: int, alpha: float) -> LossValue:
    """
    Loss of a single PredictionOutput. MSE is the squared Euclidean error per
    frame averaged over frames, on the ground-truth lane's path only; CE is
    -log of the ground-truth lane probability.
    """
    _check_gt_lane(pred.mask, np.array([gt_lane]))
    gt_future = np.asarray(gt_future, dtype=np.float64)
    path = pred.trajectories[gt_lane]
    if path.shape != gt_future.shape:
        raise ShapeMismatch(f"prediction {path.shape} vs ground truth {gt_future.shape}")
    mse_part = float(np.mean(np.sum((path - gt_future) ** 2, axis=-1)))
    ce_part = float(-np.log(pred.lane_probs[gt_lane]))
    return LossValue(alpha * mse_part + (1.0 - alpha) * ce_part, mse_part, ce_part)


def training_loss(positions: Tensor, lane_probs: Optional[Tensor], future: np.ndarray, gt_lane: np.ndarray,
                  lane_mask: np.ndarray, alpha: float) -> Tuple[Tensor, LossValue]:
    """Differentiable batch loss; without a lane classifier the CE term is zero."""
    future = np.asarray(future, dtype=np.float64)
    if positions.shape != future.shape:
        raise ShapeMismatch(f"prediction {positions.shape} vs ground truth {future.shape}")
    mse = T.mean(T.tsum(T.square(T.sub(positions, future)), axis=-1))
    if lane_probs is None:
        ce = Tensor(0.0)
    else:
        _check_gt_lane(lane_mask, gt_lane)
        ce = T.cross_entropy(lane_probs, gt_lane)
    total = T.add(T.mul(mse, alpha), T.mul(ce, 1.0 - alpha))
    return total, LossValue(total.item(), mse.item(), ce.item())
