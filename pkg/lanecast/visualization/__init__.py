# Visualization module for lanecast
from .charts import ChartGenerator

__all__ = ["ChartGenerator"]
