# Numerics module for lanecast: tensor engine, layers, optimizer, checkpoints
from .tensor import Tensor, no_grad
from .optim import SGD
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = ["Tensor", "no_grad", "SGD", "load_checkpoint", "save_checkpoint"]
