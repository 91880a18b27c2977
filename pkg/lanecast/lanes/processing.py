"""
Lane Processing Module for lanecast

Turns raw lane chunks around a target agent into the fixed three-lane model input:
1. Direction filtering - drop chunks deviating more than 30 degrees from the agent heading
2. Nearest three-lane identification - middle lane plus the closest lane on each side
3. Lane extension - stitch chunks geometrically until each lane has 18 points (85 m)

Key Rules:
- Successor links are never used here; extension is purely geometric (virtual point search)
- Ties on distances are broken by the lowest chunk_id, then the lowest point index
- Missing side lanes are padded with the (0, 0) sentinel and masked out
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from lanecast.config import (
    DIRECTION_THRESHOLD_DEG,
    EXTENSION_SEARCH_RADIUS_M,
    LANE_EXTENSION_M,
    LANE_POINTS,
    LANE_QUERY_RADIUS_M,
    LANE_SPACING_M,
    MAX_REAR_POINTS,
    SAME_LANE_TOLERANCE_M,
)
from lanecast.core.geometry import (
    angle_between,
    heading_of,
    point_to_polyline_distance,
    polyline_length,
    to_agent_frame,
)
from lanecast.core.types import AgentRecord, Direction2, LaneChunk, Point2
from lanecast.errors import AgentFiltered, InvariantViolation, NoLaneForAgent, StationaryAgent

logger = logging.getLogger(__name__)

# An agent whose nearest compatible center point is farther than this is off the lane region
LANE_REGION_RADIUS_M = 5.0

# Boundary slack for the inclusive 30 degree check
ANGLE_TOLERANCE_DEG = 1e-9

# Line offsets closer than this are equal (float noise under rotation)
OFFSET_TOLERANCE_M = 1e-9

LEFT, MIDDLE, RIGHT = 0, 1, 2


@dataclass(frozen=True)
class LaneMask:
    """Existence flags of the left / middle / right lane slots."""
    m_l: bool
    m_m: bool
    m_r: bool

    def __post_init__(self):
        if not self.m_m:
            raise InvariantViolation("LaneMask.m_m must always be True")

    @classmethod
    def from_array(cls, values: Sequence) -> "LaneMask":
        return cls(bool(values[0]), bool(values[1]), bool(values[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.m_l, self.m_m, self.m_r], dtype=bool)

    def __getitem__(self, slot: int) -> bool:
        return (self.m_l, self.m_m, self.m_r)[slot]


MIDDLE_ONLY = LaneMask(False, True, False)


@dataclass(frozen=True)
class LaneInput:
    """Three agent-relative 18-point polylines (left, middle, right) and their mask."""
    lanes: np.ndarray
    mask: LaneMask

    def __post_init__(self):
        lanes = np.asarray(self.lanes, dtype=np.float64)
        if lanes.shape != (3, LANE_POINTS, 2):
            raise InvariantViolation(f"LaneInput lanes must be (3, {LANE_POINTS}, 2), got {lanes.shape}")
        for slot in range(3):
            if not self.mask[slot] and np.any(lanes[slot] != 0.0):
                raise InvariantViolation(f"masked lane slot {slot} holds non-sentinel points")
        lanes.setflags(write=False)
        object.__setattr__(self, "lanes", lanes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LaneInput):
            return NotImplemented
        return self.mask == other.mask and np.array_equal(self.lanes, other.lanes)

    __hash__ = None


@dataclass(frozen=True)
class LaneSelection:
    middle: LaneChunk
    left: Optional[LaneChunk]
    right: Optional[LaneChunk]

    @property
    def mask(self) -> LaneMask:
        return LaneMask(self.left is not None, True, self.right is not None)

    def slots(self) -> Tuple[Optional[LaneChunk], LaneChunk, Optional[LaneChunk]]:
        return (self.left, self.middle, self.right)


def lane_direction(chunk: LaneChunk, i: int) -> Direction2:
    """
    Lane direction at center point ``i`` (0-based): l_i - l_{i-1}, and the
    direction of point 1 for the first point.
    """
    n = len(chunk)
    if not 0 <= i < n:
        raise IndexError(f"center index {i} outside chunk {chunk.chunk_id} of {n} points")
    if i == 0:
        i = 1
    return chunk.centers[i] - chunk.centers[i - 1]


def filter_by_direction(agent_heading: Direction2, agent_pos: Point2, chunks: Sequence[LaneChunk],
                        threshold: float = DIRECTION_THRESHOLD_DEG) -> List[LaneChunk]:
    """Keep chunks whose direction at the point nearest the agent is within ``threshold`` degrees."""
    kept = []
    for chunk in chunks:
        index, _ = chunk.nearest_index(agent_pos)
        direction = lane_direction(chunk, index)
        if direction.norm == 0.0:
            continue
        if angle_between(agent_heading, direction) <= threshold + ANGLE_TOLERANCE_DEG:
            kept.append(chunk)
    return kept


def _nearest_chunk(position: Point2, chunks: Sequence[LaneChunk]) -> Tuple[LaneChunk, int, float]:
    best = None
    for chunk in chunks:
        index, distance = chunk.nearest_index(position)
        key = (distance, chunk.chunk_id, index)
        if best is None or key < best[0]:
            best = (key, chunk, index)
    _, chunk, index = best
    return chunk, index, best[0][0]


def select_three_lanes(agent: AgentRecord, chunks: Sequence[LaneChunk],
                       same_lane_tolerance: float = SAME_LANE_TOLERANCE_M) -> LaneSelection:
    """
    Middle lane = chunk with the nearest center point l_a. The line through the
    middle's l_a along its lane direction splits the plane; every other chunk joins
    the side of its own l_a (a chunk exactly on the line joins the left) and each
    side keeps the chunk whose l_a is nearest the line, ties to the lowest chunk_id.

    Chunks whose l_a lies closer than ``same_lane_tolerance`` to the line are further
    pieces of the middle lane and join neither side; 0 disables the exclusion.
    """
    if not chunks:
        raise NoLaneForAgent(f"no lane left for agent {agent.agent_id}")

    position = agent.current_position
    middle, middle_index, _ = _nearest_chunk(position, chunks)
    anchor = middle.points[middle_index]
    direction = lane_direction(middle, middle_index).unit()

    sides = {LEFT: [], RIGHT: []}
    for chunk in chunks:
        if chunk.chunk_id == middle.chunk_id:
            continue
        index, _ = chunk.nearest_index(position)
        l_a = chunk.points[index]
        offset = direction.dx * (l_a[1] - anchor[1]) - direction.dy * (l_a[0] - anchor[0])
        if abs(offset) < same_lane_tolerance:
            continue
        side = LEFT if offset >= -OFFSET_TOLERANCE_M else RIGHT
        sides[side].append((abs(offset), chunk.chunk_id, chunk))

    chosen = {}
    for side, candidates in sides.items():
        if not candidates:
            chosen[side] = None
            continue
        nearest = min(c[0] for c in candidates)
        tied = [c for c in candidates if c[0] <= nearest + OFFSET_TOLERANCE_M]
        chosen[side] = min(tied, key=lambda c: c[1])[2]
    return LaneSelection(middle=middle, left=chosen[LEFT], right=chosen[RIGHT])


def _rear_count(chunk: LaneChunk, virtual: np.ndarray, unit: np.ndarray) -> int:
    return int(np.count_nonzero((chunk.points - virtual) @ unit < 0.0))


def extend_lane(start_chunk: LaneChunk, start_index: int, all_chunks: Sequence[LaneChunk],
                search_radius: float = EXTENSION_SEARCH_RADIUS_M) -> np.ndarray:
    """
    18-point polyline starting at ``start_index`` of ``start_chunk``.

    Missing points ahead are borrowed from the chunk nearest to a virtual point
    5 m beyond the last point along its lane direction; candidates with more than
    two center points behind the virtual point are discarded. Raises AgentFiltered
    when no candidate survives.
    """
    taken = start_chunk.points[start_index:start_index + LANE_POINTS]
    points = [row for row in taken]
    last_chunk, last_index = start_chunk, start_index + len(taken) - 1
    used = {start_chunk.chunk_id}

    while len(points) < LANE_POINTS:
        l_k = points[-1]
        lane_dir = lane_direction(last_chunk, last_index)
        if lane_dir.norm == 0.0:
            raise AgentFiltered("extension_failed", f"degenerate lane direction in {last_chunk.chunk_id}")
        unit = np.array(lane_dir.unit().as_tuple())
        virtual = l_k + LANE_SPACING_M * unit

        candidates = []
        for chunk in all_chunks:
            if chunk.chunk_id in used:
                continue
            distance = float(np.min(np.hypot(chunk.points[:, 0] - virtual[0], chunk.points[:, 1] - virtual[1])))
            if distance <= search_radius:
                candidates.append((distance, chunk.chunk_id, chunk))
        candidates.sort(key=lambda c: (c[0], c[1]))

        chosen = None
        for _, _, chunk in candidates:
            if _rear_count(chunk, virtual, unit) <= MAX_REAR_POINTS:
                chosen = chunk
                break
        if chosen is None:
            raise AgentFiltered(
                "extension_failed",
                f"no next lane candidate after {last_chunk.chunk_id} ({len(candidates)} discarded)",
            )

        take = min(LANE_POINTS - len(points), len(chosen))
        points.extend(chosen.points[:take])
        last_chunk, last_index = chosen, take - 1
        used.add(chosen.chunk_id)

    return np.array(points, dtype=np.float64)


def surrounding_chunks(position: Point2, chunks: Sequence[LaneChunk],
                       radius: float = LANE_QUERY_RADIUS_M) -> List[LaneChunk]:
    """Chunks with at least one center point within ``radius`` of ``position``."""
    return [c for c in chunks if c.nearest_index(position)[1] <= radius]


def build_lane_input(agent: AgentRecord, chunks: Sequence[LaneChunk],
                     heading: Optional[Direction2] = None) -> LaneInput:
    """
    Direction filtering, three-lane selection and extension, expressed in the agent
    frame (current position at the origin, heading along +x).
    """
    position = agent.current_position
    if heading is None:
        try:
            heading = heading_of(agent.history, agent.current_frame)
        except StationaryAgent as exc:
            raise AgentFiltered("stationary", str(exc)) from exc

    nearby = surrounding_chunks(position, chunks)
    if not nearby:
        raise AgentFiltered("no_lane", f"agent {agent.agent_id} has no lane within {LANE_QUERY_RADIUS_M} m")

    compatible = filter_by_direction(heading, position, nearby)
    if not compatible:
        raise AgentFiltered("wrong_direction", f"every lane near agent {agent.agent_id} is in the wrong direction")

    try:
        selection = select_three_lanes(agent, compatible)
    except NoLaneForAgent as exc:
        raise AgentFiltered("no_lane", str(exc)) from exc

    _, distance = selection.middle.nearest_index(position)
    if distance > LANE_REGION_RADIUS_M:
        raise AgentFiltered("no_lane", f"agent {agent.agent_id} is {distance:.1f} m from the nearest lane")

    lanes = np.zeros((3, LANE_POINTS, 2), dtype=np.float64)
    for slot, chunk in enumerate(selection.slots()):
        if chunk is None:
            continue
        start_index, _ = chunk.nearest_index(position)
        polyline = extend_lane(chunk, start_index, chunks)
        if polyline_length(polyline) < LANE_EXTENSION_M:
            raise AgentFiltered("extension_failed", f"lane {chunk.chunk_id} shorter than {LANE_EXTENSION_M} m")
        lanes[slot] = to_agent_frame(polyline, position, heading)

    return LaneInput(lanes=lanes, mask=selection.mask)


def label_ground_truth_lane(lane_input: LaneInput, future_xy: np.ndarray) -> int:
    """
    Slot of the unmasked lane with minimal mean point-to-polyline distance to the
    (agent-frame) future; ties prefer the middle lane, then left, then right.
    """
    best = None
    for slot in (MIDDLE, LEFT, RIGHT):
        if not lane_input.mask[slot]:
            continue
        score = float(point_to_polyline_distance(future_xy, lane_input.lanes[slot]).mean())
        if best is None or score < best[0] - 1e-12:
            best = (score, slot)
    return best[1]
