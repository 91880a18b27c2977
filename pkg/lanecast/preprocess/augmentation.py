"""
Dataset augmentation: rotation fan-out of whole scenes and upsampling of turning agents.
"""

import logging
from dataclasses import replace
from typing import List, Optional

import numpy as np

from lanecast.config import STILL_EPSILON_M, AugmentConfig
from lanecast.core.geometry import rotate_about, rotate_array, signed_angle
from lanecast.core.types import AgentRecord, Direction2, LaneChunk, OccupancyRaster, Point2, Scene
from lanecast.errors import StationaryAgent

logger = logging.getLogger(__name__)


def cumulative_heading_change(agent: AgentRecord, still_epsilon: float = STILL_EPSILON_M) -> float:
    """
    Signed heading change (degrees) accumulated over the future horizon.

    Headings are taken between consecutive frames from the current position through
    the last future frame; steps shorter than ``still_epsilon`` keep the previous
    heading.
    """
    track = np.vstack([agent.current_position.as_tuple(), agent.future.as_array()])
    steps = np.diff(track, axis=0)
    moving = [Direction2(float(dx), float(dy)) for dx, dy in steps if np.hypot(dx, dy) >= still_epsilon]

    if not moving:
        raise StationaryAgent(f"agent {agent.agent_id} does not move over its future")

    total = 0.0
    for previous, current in zip(moving, moving[1:]):
        total += signed_angle(previous, current)
    return total


def classify_turning(agent: AgentRecord, threshold: float) -> bool:
    """True iff the absolute cumulative signed heading change over the future reaches ``threshold``."""
    return abs(cumulative_heading_change(agent)) >= threshold


def _rotate_agent(agent: AgentRecord, center: Point2, theta: float) -> AgentRecord:
    return agent.with_track(rotate_array(agent.full_track(), center, theta))


def _rotate_chunk(chunk: LaneChunk, center: Point2, theta: float) -> LaneChunk:
    return LaneChunk.from_array(chunk.chunk_id, rotate_array(chunk.points, center, theta), chunk.successor_ids)


def _rotate_raster(raster: Optional[OccupancyRaster], center: Point2, theta: float) -> Optional[OccupancyRaster]:
    if raster is None:
        return None
    return OccupancyRaster(
        origin=rotate_about(raster.origin, center, theta),
        cell_size=raster.cell_size,
        grid=raster.grid,
        rotation_deg=(raster.rotation_deg + theta) % 360.0,
    )


def rotate_scene(scene: Scene, theta: float, center: Optional[Point2] = None, scene_id: Optional[str] = None) -> Scene:
    """Rotate agents, lane chunks and raster placement by ``theta`` degrees about ``center``."""
    center = center or scene.center()
    if theta % 360.0 == 0.0:
        return replace(scene, scene_id=scene_id or scene.scene_id)
    return Scene(
        scene_id=scene_id or scene.scene_id,
        agents=tuple(_rotate_agent(a, center, theta) for a in scene.agents),
        lane_chunks=tuple(_rotate_chunk(c, center, theta) for c in scene.lane_chunks),
        occupancy=_rotate_raster(scene.occupancy, center, theta),
        split_tag=scene.split_tag,
    )


def upsample_turning(scene: Scene, cfg: AugmentConfig) -> Scene:
    """Duplicate every turning agent ``turn_upsample_factor`` times with distinct ids."""
    agents: List[AgentRecord] = []
    for agent in scene.agents:
        agents.append(agent)
        try:
            turning = classify_turning(agent, cfg.turn_threshold)
        except StationaryAgent:
            turning = False
        if turning:
            for copy_index in range(1, cfg.turn_upsample_factor):
                agents.append(agent.with_track(agent.full_track(), agent_id=f"{agent.agent_id}#up{copy_index}"))
    return replace(scene, agents=tuple(agents))


def augment_scene(scene: Scene, cfg: AugmentConfig) -> List[Scene]:
    """
    ``rotation_count`` rotated copies of the scene about its bounding-box center,
    each with turning agents upsampled.
    """
    center = scene.center()
    upsampled = upsample_turning(scene, cfg)
    out = []
    for k in range(cfg.rotation_count):
        theta = k * cfg.rotation_step
        scene_id = scene.scene_id if cfg.rotation_count == 1 else f"{scene.scene_id}@rot{theta:g}"
        out.append(rotate_scene(upsampled, theta, center, scene_id))
    logger.debug("Augmented %s into %d scenes (%d agents each)", scene.scene_id, len(out), len(upsampled.agents))
    return out
