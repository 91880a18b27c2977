"""Mini-batch training loop, AR and NAR alike; the mode only changes the decoder input."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from lanecast.config import TrainConfig
from lanecast.errors import EmptyDataset
from lanecast.evaluation.metrics import HorizonReport, evaluate
from lanecast.model.loss import LossValue, training_loss
from lanecast.model.mtpp import MTPP
from lanecast.numerics.optim import SGD
from lanecast.numerics.tensor import no_grad

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochStats:
    loss: float
    mse: float
    ce: float
    batches: int
    samples: int
    learning_rate: float


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def make_optimizer(model: MTPP, cfg: TrainConfig) -> SGD:
    return SGD(model.parameters(), cfg.learning_rate, cfg.decay, cfg.grad_clip)


def train_step(model: MTPP, batch, optimizer: SGD) -> LossValue:
    """Forward, backward and one optimizer update on ``batch``."""
    result = model.forward_train(batch)
    total, value = training_loss(result.positions, result.lane_probs, batch.future, batch.gt_lane,
                                 batch.lane_mask, model.cfg.alpha)
    total.backward()
    optimizer.step()
    return value


def train_epoch(model: MTPP, samples, optimizer: SGD, batch_size: int, rng: np.random.Generator) -> EpochStats:
    if len(samples) == 0:
        raise EmptyDataset("training set is empty")
    totals = np.zeros(3)
    for indices in iterate_batches(len(samples), batch_size, rng):
        value = train_step(model, samples.subset(indices), optimizer)
        totals += len(indices) * np.array([value.total, value.mse_part, value.ce_part])
    n = len(samples)
    batches = -(-n // batch_size)
    return EpochStats(totals[0] / n, totals[1] / n, totals[2] / n, batches, n, optimizer.learning_rate)


def evaluate_loss(model: MTPP, samples, batch_size: int = 256) -> LossValue:
    """Mean loss without recording a graph (decoder mode as in training)."""
    if len(samples) == 0:
        raise EmptyDataset("validation set is empty")
    totals = np.zeros(3)
    with no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples.subset(np.arange(start, min(start + batch_size, len(samples))))
            result = model.forward_train(batch)
            _, value = training_loss(result.positions, result.lane_probs, batch.future, batch.gt_lane,
                                     batch.lane_mask, model.cfg.alpha)
            totals += len(batch) * np.array([value.total, value.mse_part, value.ce_part])
    totals /= len(samples)
    return LossValue(*totals.tolist())


@dataclass
class FitResult:
    best_state: Dict[str, np.ndarray]
    best_epoch: int
    best_fde: Optional[float]
    history: List[Dict[str, float]] = field(default_factory=list)

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history)


def fit(model: MTPP, train_samples, val_samples, cfg: TrainConfig,
        on_epoch: Optional[Callable[[int, Dict[str, float]], None]] = None) -> FitResult:
    """
    ``cfg.epochs`` epochs; keeps the weights with the lowest validation FDE at the
    longest horizon (the last epoch's when there is no validation data). Zero
    epochs returns the initial weights.
    """
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(model, cfg)
    result = FitResult(best_state=model.state_dict(), best_epoch=0, best_fde=None)

    for epoch in range(1, cfg.epochs + 1):
        stats = train_epoch(model, train_samples, optimizer, cfg.batch_size, rng)
        row = {"epoch": epoch, "train_loss": stats.loss, "train_mse": stats.mse, "train_ce": stats.ce,
               "learning_rate": stats.learning_rate}

        if val_samples is not None and len(val_samples):
            val = evaluate_loss(model, val_samples)
            report: HorizonReport = evaluate(model, val_samples)
            final_fde = report.fde[report.horizons[-1]]
            row.update({"val_loss": val.total, "val_fde": final_fde})
            improved = result.best_fde is None or final_fde < result.best_fde
        else:
            final_fde = None
            improved = True

        if improved:
            result.best_state = model.state_dict()
            result.best_epoch = epoch
            result.best_fde = final_fde

        result.history.append(row)
        logger.info(
            "Epoch %d: train loss %.4f, val loss %s, val FDE %s, lr %.3e",
            epoch, stats.loss,
            f"{row['val_loss']:.4f}" if "val_loss" in row else "n/a",
            f"{final_fde:.3f} m" if final_fde is not None else "n/a",
            stats.learning_rate,
        )
        if on_epoch is not None:
            on_epoch(epoch, row)

    return result
