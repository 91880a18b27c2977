"""Single-agent prediction in global coordinates."""

import logging

import numpy as np

from lanecast.config import KalmanConfig
from lanecast.core.geometry import from_agent_frame, heading_angle
from lanecast.core.types import AgentRecord, Scene, Trajectory
from lanecast.data.dataset import SampleSet, prepare_inputs
from lanecast.errors import AgentFiltered
from lanecast.model.mtpp import MTPP, PredictionOutput
from lanecast.preprocess.smoothing import smooth

logger = logging.getLogger(__name__)


def _observed(agent: AgentRecord, history_frames: int, cfg: KalmanConfig) -> AgentRecord:
    """Last ``history_frames`` frames, smoothed on their own (no look-ahead)."""
    if len(agent.history) < history_frames:
        raise AgentFiltered("short_track", f"agent {agent.agent_id} has {len(agent.history)} history frames")
    recent = Trajectory.from_array(agent.agent_id, agent.current_frame - history_frames + 1,
                                   agent.history.as_array()[-history_frames:])
    return AgentRecord(agent.agent_id, smooth(recent, cfg), agent.future, agent.class_label, agent.route)


def predict(model: MTPP, scene: Scene, agent_id: str, kalman: KalmanConfig = KalmanConfig()) -> PredictionOutput:
    """Three candidate paths of ``agent_id`` mapped back to the scene frame; masked slots stay zero."""
    agent = _observed(scene.agent(agent_id), model.cfg.history_frames, kalman)
    inputs = prepare_inputs(agent, scene)
    horizon = model.cfg.horizon_frames
    sample = SampleSet(
        scene_ids=np.array([scene.scene_id]),
        agent_ids=np.array([agent_id]),
        history=inputs.history[None],
        future=np.zeros((1, horizon, 2)),
        lanes=inputs.lanes[None],
        lane_mask=inputs.lane_mask[None],
        raster=inputs.raster[None],
        gt_lane=np.zeros(1, dtype=np.int64),
        origin=np.array([inputs.origin.as_tuple()]),
        heading_deg=np.array([heading_angle(inputs.heading)]),
    )
    local = model.predict_batch(sample).output(0)
    trajectories = np.zeros_like(local.trajectories)
    for slot in np.flatnonzero(local.mask):
        trajectories[slot] = from_agent_frame(local.trajectories[slot], inputs.origin, inputs.heading)
    logger.debug("Predicted %s/%s: lane probs %s", scene.scene_id, agent_id, np.round(local.lane_probs, 3))
    return PredictionOutput(trajectories, local.lane_probs, local.mask, local.selected)
