"""
Synthetic Scene Generator for lanecast

Builds desk-scale stand-ins for annotated driving scenes:
1. Road templates - straight, curve, T-intersection and crossroads, with lanes in both directions
2. Lane chunks - centerlines resampled every 5 m and cut into short chunks with successor links
3. Agents - constant-speed vehicles following a route of lanes, with Gaussian position noise
4. Occupancy - drivable cells within 2 m of any lane centerline

Key Rules:
- Intersections are four (or three) copies of one arm rotated by 90 degrees
- Approach lanes end exactly on the junction boundary; connector and exit samples start 5 m in
- Every scene draws from its own generator seeded by (seed, scene index)
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lanecast.config import FRAME_RATE_HZ, LANE_SPACING_M, MANIFEST_NAME, TEMPLATES, GeneratorConfig
from lanecast.core.geometry import rotation_matrix
from lanecast.core.types import AgentRecord, LaneChunk, OccupancyRaster, Point2, Scene, Trajectory
from lanecast.data.scene_io import save_scene
from lanecast.data.split import split
from lanecast.errors import InvalidTemplate

logger = logging.getLogger(__name__)

DENSE_STEP_M = 0.25
JUNCTION_MARGIN_M = 6.0
DRIVABLE_RADIUS_M = 2.0
RASTER_MARGIN_M = 10.0
PARKED_OFFSET_M = 8.0
CURVE_SWEEP_DEG = 90.0
EXTENSION_RESERVE_M = 90.0
TURN_MARGIN_M = 5.0


@dataclass
class LanePath:
    """A dense centerline and the chunks cut from it."""
    name: str
    dense: np.ndarray
    sample_start: float
    chunk_ids: List[str] = field(default_factory=list)
    next_paths: List["LanePath"] = field(default_factory=list)


@dataclass
class Road:
    paths: List[LanePath]
    routes: List[Tuple[List[LanePath], bool]]   # (paths along the route, is a turn)


# ---------------------------------------------------------------------------
# Dense geometry
# ---------------------------------------------------------------------------

def _straight(start: Sequence[float], heading_deg: float, length: float) -> np.ndarray:
    n = max(2, int(math.ceil(length / DENSE_STEP_M)) + 1)
    s = np.linspace(0.0, length, n)
    rad = math.radians(heading_deg)
    return np.column_stack([start[0] + s * math.cos(rad), start[1] + s * math.sin(rad)])


def _arc(center: Sequence[float], radius: float, start_deg: float, sweep_deg: float) -> np.ndarray:
    n = max(2, int(math.ceil(abs(math.radians(sweep_deg)) * radius / DENSE_STEP_M)) + 1)
    angles = np.radians(start_deg + np.linspace(0.0, sweep_deg, n))
    return np.column_stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)])


def _join(*parts: np.ndarray) -> np.ndarray:
    out = [parts[0]]
    for part in parts[1:]:
        out.append(part[1:])
    return np.vstack(out)


def _offset(dense: np.ndarray, distance: float) -> np.ndarray:
    """Shift a polyline ``distance`` meters to its left."""
    tangent = np.gradient(dense, axis=0)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    return dense + distance * normal


def _arc_lengths(dense: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])


def _interpolate(dense: np.ndarray, s: np.ndarray) -> np.ndarray:
    lengths = _arc_lengths(dense)
    return np.column_stack([np.interp(s, lengths, dense[:, 0]), np.interp(s, lengths, dense[:, 1])])


def _resample(dense: np.ndarray, start: float, step: float = LANE_SPACING_M) -> np.ndarray:
    total = _arc_lengths(dense)[-1]
    s = np.arange(start, total + 1e-6, step)
    return _interpolate(dense, s)


def _cut(samples: np.ndarray, points_per_chunk: int) -> List[np.ndarray]:
    """Consecutive chunks of ``points_per_chunk`` samples; a 1-point tail joins the previous chunk."""
    chunks = [samples[i:i + points_per_chunk] for i in range(0, len(samples), points_per_chunk)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.vstack([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _rotate(points: np.ndarray, theta_deg: float) -> np.ndarray:
    return points @ rotation_matrix(theta_deg).T


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

def _two_way(center: np.ndarray, n_lanes: int, width: float, name: str) -> Road:
    """Forward lanes right of ``center``, opposite lanes left of it, one route per lane."""
    paths = []
    for i in range(n_lanes):
        offset = (i + 0.5) * width
        paths.append(LanePath(f"{name}_fwd{i}", _offset(center, -offset), 0.0))
        paths.append(LanePath(f"{name}_rev{i}", _offset(center, offset)[::-1].copy(), 0.0))
    return Road(paths, [([p], False) for p in paths])


def _road_length(cfg: GeneratorConfig) -> float:
    return max(LANE_SPACING_M * 2, LANE_SPACING_M * math.floor(cfg.road_length / LANE_SPACING_M))


def _straight_road(cfg: GeneratorConfig, n_lanes: int, rng: np.random.Generator) -> Road:
    length = _road_length(cfg)
    return _two_way(_straight((-length / 2.0, 0.0), 0.0, length), n_lanes, cfg.lane_width, "straight")


def _curve_road(cfg: GeneratorConfig, n_lanes: int, rng: np.random.Generator) -> Road:
    radius = float(rng.uniform(cfg.curve_radius_min, cfg.curve_radius_max))
    sign = 1.0 if rng.random() < 0.5 else -1.0
    leg = LANE_SPACING_M * max(2, round(_road_length(cfg) / 2.0 / LANE_SPACING_M))
    approach = _straight((-leg, 0.0), 0.0, leg)
    bend = _arc((0.0, sign * radius), radius, -sign * 90.0, sign * CURVE_SWEEP_DEG)
    exit_leg = _straight(bend[-1], sign * CURVE_SWEEP_DEG, leg)
    return _two_way(_join(approach, bend, exit_leg), n_lanes, cfg.lane_width, "curve")


def _junction_road(cfg: GeneratorConfig, n_lanes: int, arms: Sequence[int]) -> Road:
    """Arm k is the west arm rotated by 90k degrees; traffic keeps right."""
    w = cfg.lane_width
    h = n_lanes * w + JUNCTION_MARGIN_M
    leg = LANE_SPACING_M * max(2, round(_road_length(cfg) / 2.0 / LANE_SPACING_M))

    approach: Dict[Tuple[int, int], LanePath] = {}
    exits: Dict[Tuple[int, int], LanePath] = {}
    for k in arms:
        for i in range(n_lanes):
            y = (i + 0.5) * w
            approach[k, i] = LanePath(f"arm{k}_in{i}", _rotate(_straight((-h - leg, -y), 0.0, leg), 90.0 * k), 0.0)
            exits[k, i] = LanePath(f"arm{k}_out{i}", _rotate(_straight((-h, y), 180.0, leg), 90.0 * k), LANE_SPACING_M)

    connectors: List[LanePath] = []
    routes: List[Tuple[List[LanePath], bool]] = []
    for k in arms:
        for i in range(n_lanes):
            y = (i + 0.5) * w
            moves = []
            if (k + 2) % 4 in arms:
                moves.append(((k + 2) % 4, i, _straight((-h, -y), 0.0, 2.0 * h), False, "straight"))
            if i == n_lanes - 1 and (k + 1) % 4 in arms:
                moves.append(((k + 1) % 4, i, _arc((-h, -h), h - y, 90.0, -90.0), True, "right"))
            if i == 0 and (k + 3) % 4 in arms:
                moves.append(((k + 3) % 4, i, _arc((-h, h), h + y, -90.0, 90.0), True, "left"))
            for target_arm, target_lane, dense, turning, label in moves:
                connector = LanePath(f"arm{k}_in{i}_{label}", _rotate(dense, 90.0 * k), LANE_SPACING_M)
                approach[k, i].next_paths.append(connector)
                connector.next_paths.append(exits[target_arm, target_lane])
                connectors.append(connector)
                routes.append(([approach[k, i], connector, exits[target_arm, target_lane]], turning))

    paths = list(approach.values()) + connectors + list(exits.values())
    return Road(paths, routes)


def build_road(template: str, cfg: GeneratorConfig, n_lanes: int, rng: np.random.Generator) -> Road:
    if template == "straight":
        return _straight_road(cfg, n_lanes, rng)
    if template == "curve":
        return _curve_road(cfg, n_lanes, rng)
    if template == "t_intersection":
        return _junction_road(cfg, n_lanes, (0, 1, 2))
    if template == "crossroads":
        return _junction_road(cfg, n_lanes, (0, 1, 2, 3))
    raise InvalidTemplate(f"unknown road template {template!r}; expected one of {TEMPLATES}")


# ---------------------------------------------------------------------------
# Scene assembly
# ---------------------------------------------------------------------------

def _chunk_paths(road: Road, cfg: GeneratorConfig, rng: np.random.Generator) -> List[LaneChunk]:
    points_per_chunk = int(round(cfg.chunk_length / LANE_SPACING_M)) + 1
    pieces: List[Tuple[str, np.ndarray, List[str]]] = []
    for path in road.paths:
        samples = _resample(path.dense, path.sample_start)
        for piece in _cut(samples, points_per_chunk):
            chunk_id = f"{len(pieces):04d}"
            path.chunk_ids.append(chunk_id)
            pieces.append((chunk_id, piece, []))

    links = {chunk_id: successors for chunk_id, _, successors in pieces}
    for path in road.paths:
        for a, b in zip(path.chunk_ids, path.chunk_ids[1:]):
            links[a].append(b)
        for nxt in path.next_paths:
            links[path.chunk_ids[-1]].append(nxt.chunk_ids[0])

    chunks = []
    for chunk_id, piece, successors in pieces:
        kept = [s for s in successors if not (cfg.successor_drop > 0 and rng.random() < cfg.successor_drop)]
        chunks.append(LaneChunk.from_array(chunk_id, piece, kept))
    return chunks


def _occupancy(road: Road, cell: float = 1.0) -> OccupancyRaster:
    dense = np.vstack([p.dense for p in road.paths])
    low = np.floor(dense.min(axis=0) - RASTER_MARGIN_M)
    high = np.ceil(dense.max(axis=0) + RASTER_MARGIN_M)
    cols, rows = (int(v) for v in np.ceil((high - low) / cell))
    grid = np.zeros((rows, cols), dtype=bool)
    reach = int(math.ceil(DRIVABLE_RADIUS_M / cell)) + 1
    base = np.floor((dense - low) / cell).astype(np.int64)
    for dr in range(-reach, reach + 1):
        for dc in range(-reach, reach + 1):
            col = base[:, 0] + dc
            row = base[:, 1] + dr
            center = low + (np.column_stack([col, row]) + 0.5) * cell
            ok = ((np.linalg.norm(center - dense, axis=1) <= DRIVABLE_RADIUS_M)
                  & (col >= 0) & (col < cols) & (row >= 0) & (row < rows))
            grid[row[ok], col[ok]] = True
    return OccupancyRaster(Point2(float(low[0]), float(low[1])), cell, grid)


def _place_agent(agent_id: str, route: List[LanePath], turning: bool, cfg: GeneratorConfig,
                 rng: np.random.Generator) -> AgentRecord:
    dense = _join(*[p.dense for p in route])
    total = _arc_lengths(dense)[-1]
    dt = 1.0 / FRAME_RATE_HZ
    h, f = cfg.history_frames, cfg.horizon_frames
    speed = float(rng.uniform(cfg.speed_min, cfg.speed_max))
    back = speed * (h - 1) * dt

    if turning:
        approach_end = _arc_lengths(route[0].dense)[-1]
        turn_end = approach_end + _arc_lengths(route[1].dense)[-1]
        high = approach_end - 3.0
        low = min(max(back, approach_end - 25.0), high)
        current = float(rng.uniform(low, high))
        speed = max(speed, (turn_end + TURN_MARGIN_M - current) / (f * dt))
        current = max(current, speed * (h - 1) * dt)
    else:
        upper = max(back, total - EXTENSION_RESERVE_M)
        current = float(rng.uniform(back, upper)) if upper > back else back

    s = current + speed * dt * (np.arange(h + f) - (h - 1))
    positions = _interpolate(dense, s)
    if cfg.noise_sigma > 0:
        positions = positions + rng.normal(0.0, cfg.noise_sigma, size=positions.shape)
    chunk_ids = tuple(c for p in route for c in p.chunk_ids)
    return AgentRecord(
        agent_id=agent_id,
        history=Trajectory.from_array(agent_id, 0, positions[:h]),
        future=Trajectory.from_array(agent_id, h, positions[h:]),
        route=chunk_ids,
    )


def _parked_agent(agent_id: str, road: Road, n_lanes: int, cfg: GeneratorConfig,
                  rng: np.random.Generator) -> AgentRecord:
    path = road.paths[int(rng.integers(len(road.paths)))]
    index = int(rng.integers(len(path.dense)))
    spot = _offset(path.dense, -(n_lanes * cfg.lane_width + PARKED_OFFSET_M))[index]
    positions = np.repeat(spot[None, :], cfg.history_frames + cfg.horizon_frames, axis=0)
    return AgentRecord(
        agent_id=agent_id,
        history=Trajectory.from_array(agent_id, 0, positions[:cfg.history_frames]),
        future=Trajectory.from_array(agent_id, cfg.history_frames, positions[cfg.history_frames:]),
    )


def generate_scene(index: int, cfg: GeneratorConfig, template: Optional[str] = None) -> Scene:
    """Scene ``index`` of the dataset described by ``cfg``; deterministic in (cfg.seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    template = template or cfg.templates[int(rng.integers(len(cfg.templates)))]
    if template not in TEMPLATES:
        raise InvalidTemplate(f"unknown road template {template!r}; expected one of {TEMPLATES}")
    n_lanes = int(rng.integers(cfg.lanes_per_road_min, cfg.lanes_per_road_max + 1))
    road = build_road(template, cfg, n_lanes, rng)

    heading = float(rng.uniform(0.0, 360.0))
    for path in road.paths:
        path.dense = _rotate(path.dense, heading)
    chunks = _chunk_paths(road, cfg, rng)

    turning_routes = [r for r in road.routes if r[1]]
    straight_routes = [r for r in road.routes if not r[1]]
    agents = []
    for j in range(cfg.agents_per_scene):
        agent_id = f"a{j:02d}"
        if cfg.parked_fraction > 0 and rng.random() < cfg.parked_fraction:
            agents.append(_parked_agent(agent_id, road, n_lanes, cfg, rng))
            continue
        wants_turn = bool(turning_routes) and rng.random() < cfg.turn_fraction
        pool = turning_routes if wants_turn or not straight_routes else straight_routes
        route, turning = pool[int(rng.integers(len(pool)))]
        agents.append(_place_agent(agent_id, route, turning, cfg, rng))

    occupancy = _occupancy(road) if cfg.occupancy else None
    return Scene(f"scene_{index:05d}", tuple(agents), tuple(chunks), occupancy)


def generate(cfg: GeneratorConfig) -> List[Scene]:
    for template in cfg.templates:
        if template not in TEMPLATES:
            raise InvalidTemplate(f"unknown road template {template!r}; expected one of {TEMPLATES}")
    scenes = [generate_scene(i, cfg) for i in range(cfg.n_scenes)]
    logger.info("Generated %d scenes from templates %s", len(scenes), ", ".join(cfg.templates))
    return scenes


def write_dataset(cfg: GeneratorConfig, root: Path) -> Dict[str, List[str]]:
    """Generate, split 8:1:1 and write root/{train,val,test}/scene_*.json plus the manifest."""
    root = Path(root)
    tagged = split(generate(cfg), cfg.seed)
    listing: Dict[str, List[str]] = {}
    for name, scenes in tagged.items():
        listing[name] = []
        for scene in scenes:
            save_scene(scene, root / name / f"{scene.scene_id}.json")
            listing[name].append(scene.scene_id)
    manifest = {
        "seed": cfg.seed,
        "generator": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.to_mapping().items()},
        "splits": listing,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote dataset to %s", root)
    return listing
