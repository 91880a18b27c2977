"""
Scene files (JSON syntax) and prediction files.

Floats are written with Python's shortest round-trip repr, so load(save(x)) == x
and save(load(save(x))) is byte-identical to save(x).
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from lanecast.config import FRAME_RATE_HZ, SCENE_GLOB, SCENE_SCHEMA_VERSION
from lanecast.core.types import AgentRecord, LaneChunk, OccupancyRaster, Point2, Scene, Trajectory
from lanecast.errors import InvariantViolation, ParseError, SchemaVersionMismatch

logger = logging.getLogger(__name__)


def _xy(p: Point2) -> List[float]:
    return [float(p.x), float(p.y)]


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    current = {a.current_frame for a in scene.agents}
    payload: Dict[str, Any] = {
        "schema_version": SCENE_SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "split_tag": scene.split_tag,
        "current_frame": current.pop() if len(current) == 1 else None,
        "agents": [],
        "lane_chunks": [],
    }
    for agent in scene.agents:
        frames = [[t, float(p.x), float(p.y)] for t, p in agent.history.frames + agent.future.frames]
        payload["agents"].append({
            "id": agent.agent_id,
            "class": agent.class_label,
            "current_frame": agent.current_frame,
            "frames": frames,
            "route": list(agent.route),
        })
    for chunk in scene.lane_chunks:
        payload["lane_chunks"].append({
            "id": chunk.chunk_id,
            "centers": [_xy(p) for p in chunk.centers],
            "successors": list(chunk.successor_ids),
        })
    if scene.occupancy is not None:
        raster = scene.occupancy
        payload["occupancy"] = {
            "origin": _xy(raster.origin),
            "cell_size": float(raster.cell_size),
            "rotation_deg": float(raster.rotation_deg),
            "rows": ["".join("1" if cell else "0" for cell in row) for row in raster.grid],
        }
    return payload


def _require(mapping: Mapping[str, Any], key: str, context: str) -> Any:
    if not isinstance(mapping, Mapping) or key not in mapping:
        raise ParseError(f"{context}: missing key '{key}'")
    return mapping[key]


def _agent_from_dict(raw: Mapping[str, Any], scene_current: Optional[int], context: str) -> AgentRecord:
    agent_id = str(_require(raw, "id", context))
    ctx = f"{context}.agents[{agent_id}]"
    frames = _require(raw, "frames", ctx)
    current = raw.get("current_frame", scene_current)
    if current is None:
        raise ParseError(f"{ctx}: missing key 'current_frame'")
    try:
        rows = sorted((int(t), float(x), float(y)) for t, x, y in frames)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{ctx}.frames: expected [t, x, y] triples ({exc})") from exc
    history = [(t, Point2(x, y)) for t, x, y in rows if t <= current]
    future = [(t, Point2(x, y)) for t, x, y in rows if t > current]
    return AgentRecord(
        agent_id=agent_id,
        history=Trajectory(agent_id, tuple(history), FRAME_RATE_HZ),
        future=Trajectory(agent_id, tuple(future), FRAME_RATE_HZ),
        class_label=str(raw.get("class", "vehicle")),
        route=tuple(str(r) for r in raw.get("route", ())),
    )


def _chunk_from_dict(raw: Mapping[str, Any], context: str) -> LaneChunk:
    chunk_id = str(_require(raw, "id", context))
    ctx = f"{context}.lane_chunks[{chunk_id}]"
    centers = _require(raw, "centers", ctx)
    try:
        points = tuple(Point2(float(x), float(y)) for x, y in centers)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{ctx}.centers: expected [x, y] pairs ({exc})") from exc
    return LaneChunk(chunk_id, points, tuple(str(s) for s in raw.get("successors", ())))


def _raster_from_dict(raw: Mapping[str, Any], context: str) -> OccupancyRaster:
    ctx = f"{context}.occupancy"
    origin = _require(raw, "origin", ctx)
    rows = _require(raw, "rows", ctx)
    if not rows or len({len(r) for r in rows}) != 1 or any(set(r) - {"0", "1"} for r in rows):
        raise ParseError(f"{ctx}.rows: expected equal-length bit strings")
    grid = np.array([[c == "1" for c in row] for row in rows], dtype=bool)
    return OccupancyRaster(
        origin=Point2(float(origin[0]), float(origin[1])),
        cell_size=float(_require(raw, "cell_size", ctx)),
        grid=grid,
        rotation_deg=float(raw.get("rotation_deg", 0.0)),
    )


def scene_from_dict(payload: Mapping[str, Any], context: str = "scene") -> Scene:
    if not isinstance(payload, Mapping):
        raise ParseError(f"{context}: top level must be an object")
    version = payload.get("schema_version", SCENE_SCHEMA_VERSION)
    if version != SCENE_SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{context}: schema_version {version}, expected {SCENE_SCHEMA_VERSION}")
    scene_id = str(_require(payload, "scene_id", context))
    agents_raw = _require(payload, "agents", context)
    chunks_raw = _require(payload, "lane_chunks", context)
    try:
        agents = tuple(_agent_from_dict(a, payload.get("current_frame"), context) for a in agents_raw)
        chunks = tuple(_chunk_from_dict(c, context) for c in chunks_raw)
        occupancy = payload.get("occupancy")
        raster = _raster_from_dict(occupancy, context) if occupancy is not None else None
        return Scene(scene_id, agents, chunks, raster, payload.get("split_tag"))
    except InvariantViolation as exc:
        raise ParseError(f"{context}: {exc}") from exc


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=1, allow_nan=False) + "\n"


def save_scene(scene: Scene, path: Path) -> Path:
    """Write atomically via a temporary file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_name(path.name + ".tmp")
    temp_path.write_text(dumps_scene(scene), encoding="utf-8")
    os.replace(temp_path, path)
    return path


def loads_scene(text: str, context: str = "scene") -> Scene:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{context}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return scene_from_dict(payload, context)


def load_scene(path: Path) -> Scene:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: cannot read scene ({exc})") from exc
    return loads_scene(text, str(path))


def prediction_to_dict(scene_id: str, agent: AgentRecord, prediction, variant: str) -> Dict[str, Any]:
    """Prediction file payload: observed track plus the three candidate paths."""
    start = agent.current_frame + 1
    paths = []
    for slot in range(3):
        path = prediction.trajectories[slot]
        paths.append({
            "slot": ["left", "middle", "right"][slot],
            "present": bool(prediction.mask[slot]),
            "probability": float(prediction.lane_probs[slot]),
            "frames": [[start + i, float(x), float(y)] for i, (x, y) in enumerate(path)],
        })
    return {
        "schema_version": SCENE_SCHEMA_VERSION,
        "scene_id": scene_id,
        "agent_id": agent.agent_id,
        "variant": variant,
        "current_frame": agent.current_frame,
        "history": [[t, float(p.x), float(p.y)] for t, p in agent.history.frames],
        "ground_truth": [[t, float(p.x), float(p.y)] for t, p in agent.future.frames],
        "mask": [bool(m) for m in prediction.mask],
        "lane_probs": [float(p) for p in prediction.lane_probs],
        "selected": int(prediction.selected),
        "paths": paths,
    }


def save_json(payload: Mapping[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, allow_nan=False) + "\n", encoding="utf-8")
    return path


def load_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_scenes(directory: Path) -> List[Scene]:
    """All scene files of one split directory, in file-name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ParseError(f"{directory}: not a scene directory")
    paths = sorted(directory.glob(SCENE_GLOB))
    logger.debug("Loading %d scenes from %s", len(paths), directory)
    return [load_scene(p) for p in paths]
