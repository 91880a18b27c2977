# Model module for lanecast: MTPP network, loss, training and inference
from .mtpp import MTPP, BatchPrediction, PredictionOutput
from .loss import LossValue, compute_loss
from .training import fit, train_epoch
from .inference import predict

__all__ = [
    "MTPP",
    "BatchPrediction",
    "PredictionOutput",
    "LossValue",
    "compute_loss",
    "fit",
    "train_epoch",
    "predict",
]
