# Core module for lanecast: geometry primitives and domain types
from .types import (
    AgentRecord,
    Direction2,
    LaneChunk,
    OccupancyRaster,
    Point2,
    Scene,
    Trajectory,
)
from .geometry import angle_between, heading_of, rotate_about

__all__ = [
    "AgentRecord",
    "Direction2",
    "LaneChunk",
    "OccupancyRaster",
    "Point2",
    "Scene",
    "Trajectory",
    "angle_between",
    "heading_of",
    "rotate_about",
]
