# Evaluation module for lanecast: displacement metrics
from .metrics import HorizonReport, ade, evaluate, fde, horizon_report

__all__ = ["HorizonReport", "ade", "evaluate", "fde", "horizon_report"]
