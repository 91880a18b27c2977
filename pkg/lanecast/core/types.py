"""
Domain types shared by every pipeline stage.

All types are frozen dataclasses holding tuples, so scenes can be passed across
threads and reused after augmentation without defensive copies.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from lanecast.config import FRAME_RATE_HZ, LANE_SPACING_RANGE_M, SPLIT_NAMES
from lanecast.errors import InvariantViolation


@dataclass(frozen=True)
class Point2:
    """A position in the global frame, meters."""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvariantViolation(f"Point2 must be finite, got ({self.x}, {self.y})")

    def __sub__(self, other: "Point2") -> "Direction2":
        return Direction2(self.x - other.x, self.y - other.y)

    def __add__(self, other: "Direction2") -> "Point2":
        return Point2(self.x + other.dx, self.y + other.dy)

    def distance_to(self, other: "Point2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class Direction2:
    """A displacement vector, meters."""
    dx: float
    dy: float

    @property
    def norm(self) -> float:
        return math.hypot(self.dx, self.dy)

    def scaled(self, factor: float) -> "Direction2":
        return Direction2(self.dx * factor, self.dy * factor)

    def unit(self) -> "Direction2":
        n = self.norm
        return Direction2(self.dx / n, self.dy / n)

    def as_tuple(self) -> Tuple[float, float]:
        return (self.dx, self.dy)


def points_to_array(points: Sequence[Point2]) -> np.ndarray:
    return np.array([[p.x, p.y] for p in points], dtype=np.float64).reshape(-1, 2)


def array_to_points(array: np.ndarray) -> Tuple[Point2, ...]:
    return tuple(Point2(float(x), float(y)) for x, y in np.asarray(array, dtype=np.float64).reshape(-1, 2))


@dataclass(frozen=True)
class Trajectory:
    """Timestamped positions of one agent at a fixed frame rate."""
    agent_id: str
    frames: Tuple[Tuple[int, Point2], ...]
    frame_rate_hz: float = FRAME_RATE_HZ

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple((int(t), p) for t, p in self.frames))
        if len(self.frames) < 2:
            raise InvariantViolation(f"Trajectory {self.agent_id} needs >= 2 frames")
        indices = [t for t, _ in self.frames]
        for prev, curr in zip(indices, indices[1:]):
            if curr != prev + 1:
                raise InvariantViolation(
                    f"Trajectory {self.agent_id} frames must be contiguous, got {prev} -> {curr}"
                )

    @classmethod
    def from_array(cls, agent_id: str, start_frame: int, positions: np.ndarray,
                   frame_rate_hz: float = FRAME_RATE_HZ) -> "Trajectory":
        points = array_to_points(positions)
        return cls(agent_id, tuple((start_frame + i, p) for i, p in enumerate(points)), frame_rate_hz)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def first_frame(self) -> int:
        return self.frames[0][0]

    @property
    def last_frame(self) -> int:
        return self.frames[-1][0]

    @property
    def positions(self) -> Tuple[Point2, ...]:
        return tuple(p for _, p in self.frames)

    def position(self, frame_index: int) -> Point2:
        offset = frame_index - self.first_frame
        if offset < 0 or offset >= len(self.frames):
            raise KeyError(f"frame {frame_index} not in trajectory {self.agent_id}")
        return self.frames[offset][1]

    def has_frame(self, frame_index: int) -> bool:
        return self.first_frame <= frame_index <= self.last_frame

    def as_array(self) -> np.ndarray:
        return points_to_array(self.positions)

    def with_positions(self, positions: np.ndarray) -> "Trajectory":
        return Trajectory.from_array(self.agent_id, self.first_frame, positions, self.frame_rate_hz)


VEHICLE = "vehicle"
CLASS_LABELS: Tuple[str, ...] = (VEHICLE,)


@dataclass(frozen=True)
class AgentRecord:
    """A target agent: observed history up to the current frame plus future ground truth."""
    agent_id: str
    history: Trajectory
    future: Trajectory
    class_label: str = VEHICLE
    route: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "route", tuple(self.route))
        if self.class_label not in CLASS_LABELS:
            raise InvariantViolation(f"Unsupported class label {self.class_label!r}")
        if len(self.history) < 2:
            raise InvariantViolation(f"Agent {self.agent_id} needs H >= 2 history frames")
        if self.future.first_frame != self.history.last_frame + 1:
            raise InvariantViolation(f"Agent {self.agent_id} history and future are not adjacent")

    @property
    def current_frame(self) -> int:
        return self.history.last_frame

    @property
    def current_position(self) -> Point2:
        return self.history.position(self.current_frame)

    def full_track(self) -> np.ndarray:
        return np.vstack([self.history.as_array(), self.future.as_array()])

    def with_track(self, positions: np.ndarray, agent_id: Optional[str] = None) -> "AgentRecord":
        """Rebuild with replaced positions (history rows first, then future rows)."""
        h = len(self.history)
        new_id = agent_id or self.agent_id
        return AgentRecord(
            agent_id=new_id,
            history=Trajectory.from_array(new_id, self.history.first_frame, positions[:h], self.history.frame_rate_hz),
            future=Trajectory.from_array(new_id, self.future.first_frame, positions[h:], self.future.frame_rate_hz),
            class_label=self.class_label,
            route=self.route,
        )


@dataclass(frozen=True)
class LaneChunk:
    """A fragment of lane centerline: ordered center points at nominal 5 m spacing."""
    chunk_id: str
    centers: Tuple[Point2, ...]
    successor_ids: Tuple[str, ...] = ()
    _array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(self.centers))
        object.__setattr__(self, "successor_ids", tuple(self.successor_ids))
        if len(self.centers) < 2:
            raise InvariantViolation(f"LaneChunk {self.chunk_id} needs >= 2 center points")
        array = points_to_array(self.centers)
        array.setflags(write=False)
        object.__setattr__(self, "_array", array)
        spacing = np.linalg.norm(np.diff(array, axis=0), axis=1)
        low, high = LANE_SPACING_RANGE_M
        if spacing.min() < low or spacing.max() > high:
            raise InvariantViolation(
                f"LaneChunk {self.chunk_id} spacing {spacing.min():.3f}..{spacing.max():.3f} m "
                f"outside [{low}, {high}]"
            )

    @classmethod
    def from_array(cls, chunk_id: str, centers: np.ndarray, successor_ids: Iterable[str] = ()) -> "LaneChunk":
        return cls(chunk_id, array_to_points(centers), tuple(successor_ids))

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def points(self) -> np.ndarray:
        """Read-only (n, 2) array of the center points."""
        return self._array

    def nearest_index(self, position: Point2) -> Tuple[int, float]:
        """Index of the center point nearest to ``position`` and its distance; ties go to the lowest index."""
        d = np.hypot(self._array[:, 0] - position.x, self._array[:, 1] - position.y)
        index = int(np.argmin(d))
        return index, float(d[index])


@dataclass(frozen=True)
class OccupancyRaster:
    """
    Boolean drivable-area grid.

    Cell (row, col) covers [col, col+1) x [row, row+1) cells from ``origin`` along the
    grid axes, which are rotated by ``rotation_deg`` counter-clockwise in the global
    frame.
    """
    origin: Point2
    cell_size: float
    grid: np.ndarray
    rotation_deg: float = 0.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        if grid.ndim != 2:
            raise InvariantViolation("OccupancyRaster grid must be 2-D")
        if not self.cell_size > 0:
            raise InvariantViolation("OccupancyRaster cell_size must be > 0")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def width(self) -> int:
        return int(self.grid.shape[1])

    @property
    def height(self) -> int:
        return int(self.grid.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, OccupancyRaster):
            return NotImplemented
        return (self.origin == other.origin and self.cell_size == other.cell_size
                and self.rotation_deg == other.rotation_deg and np.array_equal(self.grid, other.grid))

    __hash__ = None

    def lookup(self, xy: np.ndarray) -> np.ndarray:
        """Drivable flag for an (..., 2) array of global positions; outside the grid is not drivable."""
        theta = math.radians(self.rotation_deg)
        c, s = math.cos(theta), math.sin(theta)
        rel_x = xy[..., 0] - self.origin.x
        rel_y = xy[..., 1] - self.origin.y
        local_x = (c * rel_x + s * rel_y) / self.cell_size
        local_y = (-s * rel_x + c * rel_y) / self.cell_size
        col = np.floor(local_x).astype(np.int64)
        row = np.floor(local_y).astype(np.int64)
        inside = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        out = np.zeros(xy.shape[:-1], dtype=bool)
        out[inside] = self.grid[row[inside], col[inside]]
        return out


@dataclass(frozen=True)
class Scene:
    """Agents, lane chunks and an optional occupancy raster; the unit of storage and augmentation."""
    scene_id: str
    agents: Tuple[AgentRecord, ...]
    lane_chunks: Tuple[LaneChunk, ...]
    occupancy: Optional[OccupancyRaster] = None
    split_tag: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "lane_chunks", tuple(self.lane_chunks))
        if self.split_tag is not None and self.split_tag not in SPLIT_NAMES:
            raise InvariantViolation(f"Unknown split tag {self.split_tag!r}")
        agent_ids = [a.agent_id for a in self.agents]
        if len(set(agent_ids)) != len(agent_ids):
            raise InvariantViolation(f"Scene {self.scene_id} has duplicate agent ids")
        chunk_ids = [c.chunk_id for c in self.lane_chunks]
        if len(set(chunk_ids)) != len(chunk_ids):
            raise InvariantViolation(f"Scene {self.scene_id} has duplicate chunk ids")

    def tagged(self, split_tag: str) -> "Scene":
        """Return a copy carrying ``split_tag``; a scene is tagged exactly once."""
        if self.split_tag is not None:
            raise InvariantViolation(f"Scene {self.scene_id} already tagged {self.split_tag!r}")
        return replace(self, split_tag=split_tag)

    def agent(self, agent_id: str) -> AgentRecord:
        for agent in self.agents:
            if agent.agent_id == agent_id:
                return agent
        raise KeyError(f"agent {agent_id!r} not in scene {self.scene_id}")

    def chunk_index(self) -> Dict[str, LaneChunk]:
        return {c.chunk_id: c for c in self.lane_chunks}

    def bounding_box(self) -> Tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) over agent positions, lane points and the raster footprint."""
        parts: List[np.ndarray] = [a.full_track() for a in self.agents]
        parts += [c.points for c in self.lane_chunks]
        if self.occupancy is not None:
            r = self.occupancy
            theta = math.radians(r.rotation_deg)
            axis_x = np.array([math.cos(theta), math.sin(theta)]) * r.cell_size
            axis_y = np.array([-math.sin(theta), math.cos(theta)]) * r.cell_size
            o = np.array(r.origin.as_tuple())
            parts.append(np.array([o, o + axis_x * r.width, o + axis_y * r.height,
                                   o + axis_x * r.width + axis_y * r.height]))
        if not parts:
            return (0.0, 0.0, 0.0, 0.0)
        stacked = np.vstack(parts)
        xmin, ymin = stacked.min(axis=0)
        xmax, ymax = stacked.max(axis=0)
        return (float(xmin), float(ymin), float(xmax), float(ymax))

    def center(self) -> Point2:
        xmin, ymin, xmax, ymax = self.bounding_box()
        return Point2((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)
