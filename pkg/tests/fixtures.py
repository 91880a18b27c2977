"""Small scene builders shared by the test modules."""

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from lanecast.config import LANE_POINTS, RASTER_SIZE
from lanecast.core.types import AgentRecord, LaneChunk, Scene, Trajectory
from lanecast.data.dataset import SampleSet


def line_track(start: Sequence[float], velocity: Sequence[float], n_frames: int) -> np.ndarray:
    """Positions of a constant-velocity agent, one row per frame."""
    steps = np.arange(n_frames, dtype=np.float64)[:, None]
    return np.asarray(start, dtype=np.float64) + steps * np.asarray(velocity, dtype=np.float64)


def make_agent(agent_id: str, positions: np.ndarray, history_frames: int = 4, start_frame: int = 0) -> AgentRecord:
    positions = np.asarray(positions, dtype=np.float64)
    return AgentRecord(
        agent_id=agent_id,
        history=Trajectory.from_array(agent_id, start_frame, positions[:history_frames]),
        future=Trajectory.from_array(agent_id, start_frame + history_frames, positions[history_frames:]),
    )


def straight_chunks(prefix: str, start: Sequence[float], direction: Sequence[float], total_points: int,
                    points_per_chunk: int = 5) -> List[LaneChunk]:
    """A straight lane every 5 m from ``start`` along ``direction``, cut into chained chunks."""
    unit = np.asarray(direction, dtype=np.float64)
    unit = unit / np.linalg.norm(unit)
    points = np.asarray(start, dtype=np.float64) + 5.0 * np.arange(total_points)[:, None] * unit
    chunks: List[LaneChunk] = []
    begin, index = 0, 0
    while begin < total_points - 1:
        end = min(begin + points_per_chunk, total_points)
        if total_points - end == 1:
            end = total_points
        chunk_id = f"{prefix}{index}"
        chunks.append(LaneChunk.from_array(chunk_id, points[begin:end]))
        begin, index = end, index + 1
    linked = []
    for i, chunk in enumerate(chunks):
        successors: Tuple[str, ...] = (chunks[i + 1].chunk_id,) if i + 1 < len(chunks) else ()
        linked.append(LaneChunk(chunk.chunk_id, chunk.centers, successors))
    return linked


def three_lane_road(length_points: int = 40, spacing: float = 3.5, with_opposite: bool = True) -> List[LaneChunk]:
    """Three eastbound lanes at y = -spacing, 0, +spacing starting at x = -20, plus one westbound lane."""
    chunks = []
    for name, y in (("r", -spacing), ("m", 0.0), ("l", spacing)):
        chunks += straight_chunks(name, (-20.0, y), (1.0, 0.0), length_points)
    if with_opposite:
        chunks += straight_chunks("w", (-20.0 + 5.0 * (length_points - 1), 2 * spacing), (-1.0, 0.0), length_points)
    return chunks


def eastbound_agent(agent_id: str = "a00", y: float = 0.0, speed: float = 5.0, history_frames: int = 4,
                    horizon_frames: int = 12) -> AgentRecord:
    """Agent arriving at the origin (x = 0) at its current frame, moving along +x."""
    n = history_frames + horizon_frames
    start_x = -speed * (history_frames - 1)
    return make_agent(agent_id, line_track((start_x, y), (speed, 0.0), n), history_frames)


def make_scene(agents: Iterable[AgentRecord], chunks: Iterable[LaneChunk], scene_id: str = "scene_test",
               occupancy=None) -> Scene:
    return Scene(scene_id, tuple(agents), tuple(chunks), occupancy)


def rotate_points(xy: np.ndarray, theta_deg: float, shift: Optional[Sequence[float]] = None) -> np.ndarray:
    rad = np.radians(theta_deg)
    rot = np.array([[np.cos(rad), -np.sin(rad)], [np.sin(rad), np.cos(rad)]])
    out = np.asarray(xy, dtype=np.float64) @ rot.T
    if shift is not None:
        out = out + np.asarray(shift, dtype=np.float64)
    return out


def toy_samples(n: int, history_frames: int = 4, horizon_frames: int = 12, speed: float = 5.0,
                mask=(True, True, True), gt_lane: int = 1, seed: int = 0):
    """Agent-frame samples of agents driving straight along +x next to three straight lanes."""
    rng = np.random.default_rng(seed)
    history = line_track((-speed * (history_frames - 1), 0.0), (speed, 0.0), history_frames)
    future = line_track((speed, 0.0), (speed, 0.0), horizon_frames)
    lane_x = 5.0 * np.arange(LANE_POINTS)
    lanes = np.stack([np.stack([lane_x, np.full(LANE_POINTS, y)], axis=1) for y in (3.5, 0.0, -3.5)])
    lane_mask = np.asarray(mask, dtype=bool)
    lanes[~lane_mask] = 0.0
    jitter = rng.normal(0.0, 0.05, (n, 1, 2))
    return SampleSet(
        scene_ids=np.array([f"scene_{i:03d}" for i in range(n)]),
        agent_ids=np.array([f"a{i:02d}" for i in range(n)]),
        history=history[None] + jitter,
        future=future[None] + jitter,
        lanes=np.repeat(lanes[None], n, axis=0),
        lane_mask=np.repeat(lane_mask[None], n, axis=0),
        raster=np.zeros((n, RASTER_SIZE, RASTER_SIZE), dtype=bool),
        gt_lane=np.full(n, gt_lane, dtype=np.int64),
        origin=np.zeros((n, 2)),
        heading_deg=np.zeros(n),
    )
