# Lane processing module for lanecast
from .processing import (
    LaneInput,
    LaneMask,
    build_lane_input,
    extend_lane,
    filter_by_direction,
    label_ground_truth_lane,
    lane_direction,
    select_three_lanes,
)

__all__ = [
    "LaneInput",
    "LaneMask",
    "build_lane_input",
    "extend_lane",
    "filter_by_direction",
    "label_ground_truth_lane",
    "lane_direction",
    "select_three_lanes",
]
