"""
Model-ready samples.

One sample per surviving target agent: agent-frame history and future, the
three-lane input with its mask, the agent-centred occupancy crop and the
ground-truth lane label. Samples of a split are stored column-wise in a
compressed numpy archive.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lanecast.config import HISTORY_FRAMES, HORIZON_FRAMES, LANE_POINTS, RASTER_SIZE, KalmanConfig
from lanecast.core.geometry import heading_angle, heading_of, to_agent_frame
from lanecast.core.types import AgentRecord, Direction2, Point2, Scene, Trajectory
from lanecast.errors import AgentFiltered, EmptyDataset, ParseError, StationaryAgent
from lanecast.lanes.processing import LaneInput, LaneMask, build_lane_input, label_ground_truth_lane
from lanecast.preprocess.raster import agent_raster
from lanecast.preprocess.smoothing import smooth

logger = logging.getLogger(__name__)

ARRAY_FIELDS: Tuple[str, ...] = (
    "history", "future", "lanes", "lane_mask", "raster", "gt_lane", "origin", "heading_deg",
)


@dataclass
class SampleSet:
    """Column-wise batch of samples; row i of every array belongs to the same agent."""
    scene_ids: np.ndarray
    agent_ids: np.ndarray
    history: np.ndarray      # (N, H, 2) agent frame
    future: np.ndarray       # (N, F, 2) agent frame
    lanes: np.ndarray        # (N, 3, 18, 2) agent frame
    lane_mask: np.ndarray    # (N, 3) bool
    raster: np.ndarray       # (N, 64, 64) bool
    gt_lane: np.ndarray      # (N,) int
    origin: np.ndarray       # (N, 2) global current position
    heading_deg: np.ndarray  # (N,) global heading

    def __len__(self) -> int:
        return len(self.agent_ids)

    @property
    def history_frames(self) -> int:
        return int(self.history.shape[1])

    @property
    def horizon_frames(self) -> int:
        return int(self.future.shape[1])

    def subset(self, indices: Sequence[int]) -> "SampleSet":
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(**{name: getattr(self, name)[indices] for name in ("scene_ids", "agent_ids", *ARRAY_FIELDS)})

    @classmethod
    def empty(cls, history_frames: int = HISTORY_FRAMES, horizon_frames: int = HORIZON_FRAMES) -> "SampleSet":
        return cls(
            scene_ids=np.array([], dtype=str),
            agent_ids=np.array([], dtype=str),
            history=np.zeros((0, history_frames, 2)),
            future=np.zeros((0, horizon_frames, 2)),
            lanes=np.zeros((0, 3, LANE_POINTS, 2)),
            lane_mask=np.zeros((0, 3), dtype=bool),
            raster=np.zeros((0, RASTER_SIZE, RASTER_SIZE), dtype=bool),
            gt_lane=np.zeros(0, dtype=np.int64),
            origin=np.zeros((0, 2)),
            heading_deg=np.zeros(0),
        )

    @classmethod
    def concatenate(cls, parts: Iterable["SampleSet"]) -> "SampleSet":
        parts = list(parts)
        nonempty = [p for p in parts if len(p)]
        if not nonempty:
            return parts[0] if parts else cls.empty()
        parts = nonempty
        names = ("scene_ids", "agent_ids", *ARRAY_FIELDS)
        return cls(**{name: np.concatenate([getattr(p, name) for p in parts]) for name in names})

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {name: getattr(self, name) for name in ARRAY_FIELDS}
        np.savez_compressed(path, scene_ids=self.scene_ids.astype(str), agent_ids=self.agent_ids.astype(str),
                            **arrays)
        return path

    @classmethod
    def load(cls, path: Path) -> "SampleSet":
        path = Path(path)
        if not path.exists():
            raise EmptyDataset(f"no sample archive at {path}")
        try:
            with np.load(path, allow_pickle=False) as archive:
                return cls(**{name: archive[name] for name in ("scene_ids", "agent_ids", *ARRAY_FIELDS)})
        except (KeyError, ValueError, OSError) as exc:
            raise ParseError(f"{path}: unreadable sample archive ({exc})") from exc


@dataclass
class FilterStats:
    """Kept agents and filtered agents by reason."""
    kept: int = 0
    filtered: Counter = field(default_factory=Counter)

    def add(self, other: "FilterStats") -> "FilterStats":
        self.kept += other.kept
        self.filtered.update(other.filtered)
        return self

    @property
    def total(self) -> int:
        return self.kept + sum(self.filtered.values())

    def to_row(self, split: str) -> Dict[str, object]:
        row: Dict[str, object] = {"split": split, "kept": self.kept}
        for reason in AgentFiltered.REASONS:
            row[reason] = int(self.filtered.get(reason, 0))
        row["total"] = self.total
        return row


def filter_summary(stats: Dict[str, FilterStats]) -> pd.DataFrame:
    """One row per split with kept and per-reason filtered counts."""
    columns = ["split", "kept", *AgentFiltered.REASONS, "total"]
    return pd.DataFrame([s.to_row(split) for split, s in stats.items()], columns=columns)


def _window(agent: AgentRecord, history_frames: int, horizon_frames: int) -> AgentRecord:
    if len(agent.history) < history_frames or len(agent.future) < horizon_frames:
        raise AgentFiltered(
            "short_track",
            f"agent {agent.agent_id} has {len(agent.history)}+{len(agent.future)} frames, "
            f"needs {history_frames}+{horizon_frames}",
        )
    history = agent.history.as_array()[-history_frames:]
    future = agent.future.as_array()[:horizon_frames]
    return AgentRecord(
        agent_id=agent.agent_id,
        history=Trajectory.from_array(agent.agent_id, agent.current_frame - history_frames + 1, history),
        future=Trajectory.from_array(agent.agent_id, agent.current_frame + 1, future),
        class_label=agent.class_label,
        route=agent.route,
    )


def smooth_agent(agent: AgentRecord, cfg: KalmanConfig) -> AgentRecord:
    """
    Smooth history and future as two separate tracks, so the history (and the
    origin and heading taken from it) never depends on future frames and matches
    what single-agent prediction sees.
    """
    return AgentRecord(agent.agent_id, smooth(agent.history, cfg), smooth(agent.future, cfg),
                       agent.class_label, agent.route)


@dataclass(frozen=True)
class AgentSample:
    """Inputs of one agent in the agent frame (future may be absent at inference)."""
    history: np.ndarray
    lanes: np.ndarray
    lane_mask: np.ndarray
    raster: np.ndarray
    origin: Point2
    heading: Direction2


def prepare_inputs(agent: AgentRecord, scene: Scene, heading: Optional[Direction2] = None) -> AgentSample:
    """Lane input and occupancy crop of an already smoothed agent."""
    if heading is None:
        try:
            heading = heading_of(agent.history, agent.current_frame)
        except StationaryAgent as exc:
            raise AgentFiltered("stationary", str(exc)) from exc
    origin = agent.current_position
    lane_input = build_lane_input(agent, scene.lane_chunks, heading)
    if scene.occupancy is not None:
        raster = agent_raster(scene.occupancy, origin, heading)
    else:
        raster = np.zeros((RASTER_SIZE, RASTER_SIZE), dtype=bool)
    return AgentSample(
        history=to_agent_frame(agent.history.as_array(), origin, heading),
        lanes=np.array(lane_input.lanes),
        lane_mask=lane_input.mask.as_array(),
        raster=raster,
        origin=origin,
        heading=heading,
    )


def build_samples(scene: Scene, cfg: KalmanConfig = KalmanConfig(), history_frames: int = HISTORY_FRAMES,
                  horizon_frames: int = HORIZON_FRAMES) -> Tuple[SampleSet, FilterStats]:
    """Every agent of ``scene`` that survives smoothing and lane processing becomes a sample."""
    rows: List[Dict[str, object]] = []
    stats = FilterStats()
    for agent in scene.agents:
        try:
            windowed = _window(agent, history_frames, horizon_frames)
            smoothed = smooth_agent(windowed, cfg)
            inputs = prepare_inputs(smoothed, scene)
        except AgentFiltered as exc:
            stats.filtered[exc.reason] += 1
            logger.debug("Filtered %s/%s: %s", scene.scene_id, agent.agent_id, exc)
            continue

        future = to_agent_frame(smoothed.future.as_array(), inputs.origin, inputs.heading)
        lane_input_mask = inputs.lane_mask
        gt_lane = label_ground_truth_lane(LaneInput(inputs.lanes, LaneMask.from_array(lane_input_mask)), future)
        rows.append({
            "scene_id": scene.scene_id,
            "agent_id": agent.agent_id,
            "history": inputs.history,
            "future": future,
            "lanes": inputs.lanes,
            "lane_mask": lane_input_mask,
            "raster": inputs.raster,
            "gt_lane": gt_lane,
            "origin": np.array(inputs.origin.as_tuple()),
            "heading_deg": heading_angle(inputs.heading),
        })
        stats.kept += 1

    if not rows:
        return SampleSet.empty(history_frames, horizon_frames), stats
    samples = SampleSet(
        scene_ids=np.array([r["scene_id"] for r in rows], dtype=str),
        agent_ids=np.array([r["agent_id"] for r in rows], dtype=str),
        history=np.stack([r["history"] for r in rows]),
        future=np.stack([r["future"] for r in rows]),
        lanes=np.stack([r["lanes"] for r in rows]),
        lane_mask=np.stack([r["lane_mask"] for r in rows]).astype(bool),
        raster=np.stack([r["raster"] for r in rows]).astype(bool),
        gt_lane=np.array([r["gt_lane"] for r in rows], dtype=np.int64),
        origin=np.stack([r["origin"] for r in rows]),
        heading_deg=np.array([r["heading_deg"] for r in rows], dtype=np.float64),
    )
    return samples, stats
