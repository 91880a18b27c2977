"""
MTPP network: motion encoder, map encoders, fusion, masked lane classifier and
the transformer motion decoder with its trajectory generator.

All inputs live in the agent frame (current position at the origin, heading
along +x) and are divided by POSITION_NORMALIZER_M before entering the network.
The generator emits per-frame displacement increments in meters; positions are
their running sum starting at the current position.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from lanecast.config import DEFAULT_SEED, LANE_POINTS, POSITION_NORMALIZER_M, RASTER_SIZE, ModelConfig
from lanecast.errors import InvariantViolation, MaskedLaneRequested, ShapeMismatch, WrongRasterSize
from lanecast.lanes.processing import MIDDLE
from lanecast.numerics import tensor as T
from lanecast.numerics.nn import (
    MLP,
    Conv1d,
    Conv2d,
    DecoderLayer,
    EncoderLayer,
    Linear,
    Module,
    positional_encoding,
)
from lanecast.numerics.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

LANE_KERNEL, LANE_STRIDE = 3, 2
OCCUPANCY_KERNELS = (5, 5, 5, 3)
OCCUPANCY_STRIDES = (2, 2, 1, 1)
GENERATOR_OUTPUT_GAIN = 0.1
MAX_SEQUENCE = 64
INFERENCE_BATCH = 256

StepHook = Callable[[int, Tensor], Optional[Tensor]]


@dataclass(frozen=True)
class PredictionOutput:
    """Three candidate paths (one per lane slot), lane probabilities and the chosen path."""
    trajectories: np.ndarray   # (3, F, 2); masked slots are zeros
    lane_probs: np.ndarray     # (3,)
    mask: np.ndarray           # (3,) bool
    selected: int

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        probs = np.asarray(self.lane_probs, dtype=np.float64)
        if np.any(probs[~mask] != 0.0):
            raise InvariantViolation("masked lane probabilities must be exactly 0")
        if abs(probs[mask].sum() - 1.0) > 1e-9:
            raise InvariantViolation(f"lane probabilities sum to {probs[mask].sum()}")
        if not mask[self.selected]:
            raise InvariantViolation(f"selected lane {self.selected} is masked")

    @property
    def selected_trajectory(self) -> np.ndarray:
        return self.trajectories[self.selected]


@dataclass(frozen=True)
class BatchPrediction:
    trajectories: np.ndarray   # (N, 3, F, 2)
    lane_probs: np.ndarray     # (N, 3)
    mask: np.ndarray           # (N, 3)
    selected: np.ndarray       # (N,)

    def __len__(self) -> int:
        return len(self.selected)

    def selected_trajectories(self) -> np.ndarray:
        return self.trajectories[np.arange(len(self.selected)), self.selected]

    def output(self, i: int) -> PredictionOutput:
        return PredictionOutput(self.trajectories[i], self.lane_probs[i], self.mask[i], int(self.selected[i]))


@dataclass
class ForwardResult:
    positions: Tensor              # (B, F, 2) path along the ground-truth lane
    lane_probs: Optional[Tensor]   # (B, 3); None when no lane classifier is active


class LaneEncoder(Module):
    """Shared 1D conv + fully connected layer applied to every lane slot."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.conv = Conv1d(2, cfg.lane_channels, LANE_KERNEL, LANE_STRIDE, rng)
        length = T.conv_output_length(LANE_POINTS, LANE_KERNEL, LANE_STRIDE)
        self.fc = Linear(cfg.lane_channels * length, cfg.map_fc_dim, rng)

    def forward(self, lanes: np.ndarray) -> Tensor:
        batch = lanes.shape[0]
        x = np.transpose(lanes.reshape(batch * 3, LANE_POINTS, 2), (0, 2, 1)) / POSITION_NORMALIZER_M
        h = T.relu(self.conv(Tensor(x)))
        h = T.reshape(h, (batch * 3, -1))
        return T.reshape(self.fc(h), (batch, 3, -1))


class OccupancyEncoder(Module):
    """2D conv stack over the 64x64 crop, then a fully connected layer."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        channels = cfg.occupancy_channels
        self.convs = []
        size, in_channels = RASTER_SIZE, 1
        for kernel, stride in zip(OCCUPANCY_KERNELS, OCCUPANCY_STRIDES):
            self.convs.append(Conv2d(in_channels, channels, kernel, stride, rng))
            size = T.conv_output_length(size, kernel, stride)
            in_channels = channels
        self.fc = Linear(channels * size * size, cfg.map_fc_dim, rng)

    def forward(self, raster: np.ndarray) -> Tensor:
        x = Tensor(np.asarray(raster, dtype=np.float64)[:, None, :, :])
        for conv in self.convs:
            x = T.relu(conv(x))
        return self.fc(T.reshape(x, (x.shape[0], -1)))


class MTPP(Module):
    """Multi-path trajectory predictor conditioned on candidate lanes."""

    def __init__(self, cfg: ModelConfig, seed: int = DEFAULT_SEED):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model

        self.input_proj = Linear(2, d, rng)
        self.encoder = [EncoderLayer(d, cfg.n_heads, cfg.ff_dim, rng) for _ in range(cfg.n_enc_layers)]

        map_dim = 0
        if cfg.map_mode == "lane":
            self.lane_encoder = LaneEncoder(cfg, rng)
            self.lane_token = Linear(cfg.map_fc_dim, d, rng)
            map_dim = 3 * cfg.map_fc_dim
        elif cfg.map_mode == "occupancy":
            self.occupancy_encoder = OccupancyEncoder(cfg, rng)
            map_dim = cfg.map_fc_dim

        self.fusion = Linear(d + map_dim, cfg.fusion_dim, rng)
        if cfg.map_mode == "lane":
            self.classifier = MLP(cfg.fusion_dim, cfg.classifier_dims, rng)
        self.memory_proj = Linear(cfg.fusion_dim, d, rng)

        self.target_proj = Linear(2, d, rng)
        self.decoder = [DecoderLayer(d, cfg.n_heads, cfg.ff_dim, rng) for _ in range(cfg.n_dec_layers)]
        self.generator = MLP(d, cfg.generator_dims, rng, last_gain=GENERATOR_OUTPUT_GAIN)

        self._positions = positional_encoding(MAX_SEQUENCE, d)

    @property
    def uses_lanes(self) -> bool:
        return self.cfg.map_mode == "lane"

    # -- encoders -------------------------------------------------------------
    def encode_history(self, history: np.ndarray) -> Tensor:
        """(B, H, 2) agent-frame history -> (B, H, d_model) memory."""
        history = np.asarray(history, dtype=np.float64)
        if history.ndim != 3 or history.shape[2] != 2 or history.shape[1] < 2:
            raise ShapeMismatch(f"history must be (B, H>=2, 2), got {history.shape}")
        length = history.shape[1]
        x = self.input_proj(Tensor(history / POSITION_NORMALIZER_M)) + self._positions[:length]
        for layer in self.encoder:
            x = layer(x)
        return x

    def encode_map_lane(self, lanes: np.ndarray) -> Tuple[Tensor, Tensor]:
        """(B, 3, 18, 2) lanes -> per-lane (B, 3, map_fc_dim) and flattened map feature."""
        lanes = np.asarray(lanes, dtype=np.float64)
        if lanes.ndim != 4 or lanes.shape[1:] != (3, LANE_POINTS, 2):
            raise ShapeMismatch(f"lanes must be (B, 3, {LANE_POINTS}, 2), got {lanes.shape}")
        per_lane = self.lane_encoder(lanes)
        return per_lane, T.reshape(per_lane, (lanes.shape[0], -1))

    def encode_map_occupancy(self, raster: np.ndarray) -> Tensor:
        raster = np.asarray(raster)
        if raster.ndim != 3 or raster.shape[1:] != (RASTER_SIZE, RASTER_SIZE):
            raise WrongRasterSize(f"raster must be (B, {RASTER_SIZE}, {RASTER_SIZE}), got {raster.shape}")
        return self.occupancy_encoder(raster)

    def fuse(self, summary: Tensor, map_feature: Optional[Tensor]) -> Tensor:
        features = summary if map_feature is None else T.concat([summary, map_feature], axis=-1)
        expected = self.fusion.weight.shape[0]
        if features.shape[-1] != expected:
            raise ShapeMismatch(f"fusion expects {expected} features, got {features.shape[-1]}")
        return self.fusion(features)

    def classify_lane(self, fused: Tensor, mask: np.ndarray) -> Tensor:
        """Softmax over the three slots, zeroed on masked slots and renormalised."""
        mask = np.asarray(mask, dtype=bool)
        if not mask[:, MIDDLE].all():
            raise InvariantViolation("the middle lane slot must always be present")
        probs = T.softmax(self.classifier(fused), axis=-1)
        kept = T.mul(probs, mask.astype(np.float64))
        return T.div(kept, T.tsum(kept, axis=-1, keepdims=True))

    def encode(self, history: np.ndarray, lanes: Optional[np.ndarray] = None,
               raster: Optional[np.ndarray] = None) -> Tuple[Tensor, Optional[Tensor]]:
        """Fused feature (B, fusion_dim) and, in lane mode, the per-lane features."""
        memory = self.encode_history(history)
        summary = memory[:, -1, :]
        per_lane, map_feature = None, None
        if self.cfg.map_mode == "lane":
            per_lane, map_feature = self.encode_map_lane(lanes)
        elif self.cfg.map_mode == "occupancy":
            map_feature = self.encode_map_occupancy(raster)
        return self.fuse(summary, map_feature), per_lane

    # -- decoder --------------------------------------------------------------
    def _memory(self, fused: Tensor, lane_feature: Optional[Tensor]) -> Tensor:
        batch = fused.shape[0]
        tokens = [T.reshape(self.memory_proj(fused), (batch, 1, -1))]
        if lane_feature is not None:
            tokens.append(T.reshape(self.lane_token(lane_feature), (batch, 1, -1)))
        return tokens[0] if len(tokens) == 1 else T.concat(tokens, axis=1)

    def _decode_tokens(self, target: Tensor, memory: Tensor) -> Tensor:
        length = target.shape[1]
        x = self.target_proj(T.div(target, POSITION_NORMALIZER_M)) + self._positions[:length]
        mask = T.causal_mask(length)
        for layer in self.decoder:
            x = layer(x, memory, mask)
        return x

    def decode(self, fused: Tensor, lane_feature: Optional[Tensor] = None, teacher: Optional[np.ndarray] = None,
               trace: Optional[List[np.ndarray]] = None, on_step: Optional[StepHook] = None) -> Tensor:
        """
        (B, F, 2) positions relative to the current position.

        With ``teacher`` (ground-truth future) the decoder runs once on the shifted
        ground truth under a causal mask. Without it every predicted position is
        appended to the target sequence before the next step; ``trace`` receives the
        target sequence fed at each step and ``on_step`` may replace a step's output
        before it is fed back.
        """
        horizon = self.cfg.horizon_frames
        memory = self._memory(fused, lane_feature)
        batch = fused.shape[0]

        if teacher is not None:
            teacher = np.asarray(teacher, dtype=np.float64)
            if teacher.shape != (batch, horizon, 2):
                raise ShapeMismatch(f"teacher must be {(batch, horizon, 2)}, got {teacher.shape}")
            shifted = np.concatenate([np.zeros((batch, 1, 2)), teacher[:, :-1]], axis=1)
            if trace is not None:
                trace.append(shifted.copy())
            increments = self.generator(self._decode_tokens(Tensor(shifted), memory))
            return T.matmul(np.tril(np.ones((horizon, horizon))), increments)

        previous = Tensor(np.zeros((batch, 1, 2)))
        tokens = [previous]
        outputs = []
        for step in range(horizon):
            target = tokens[0] if len(tokens) == 1 else T.concat(tokens, axis=1)
            if trace is not None:
                trace.append(target.values.copy())
            hidden = self._decode_tokens(target, memory)
            position = previous + self.generator(hidden[:, -1:, :])
            if on_step is not None:
                replaced = on_step(step, position)
                if replaced is not None:
                    position = T.as_tensor(replaced)
            outputs.append(position)
            tokens.append(position)
            previous = position
        return T.concat(outputs, axis=1)

    def decode_trajectory(self, fused: Tensor, per_lane: Optional[Tensor], lane_index: int,
                          mask: np.ndarray) -> Tensor:
        """Autoregressive path along one lane slot for every row of the batch."""
        mask = np.asarray(mask, dtype=bool).reshape(-1, 3)
        if not mask[:, lane_index].all():
            raise MaskedLaneRequested(f"lane slot {lane_index} is masked for some samples")
        lane_feature = per_lane[:, lane_index, :] if per_lane is not None else None
        return self.decode(fused, lane_feature)

    # -- training / inference -------------------------------------------------
    def forward_train(self, batch) -> ForwardResult:
        """Path along each sample's ground-truth lane plus lane probabilities."""
        fused, per_lane = self.encode(batch.history, batch.lanes, batch.raster)
        teacher = batch.future if self.cfg.regression_mode == "NAR" else None
        if not self.uses_lanes:
            return ForwardResult(self.decode(fused, None, teacher), None)
        probs = self.classify_lane(fused, batch.lane_mask)
        rows = np.arange(len(batch.gt_lane))
        lane_feature = per_lane[rows, np.asarray(batch.gt_lane, dtype=np.int64), :]
        return ForwardResult(self.decode(fused, lane_feature, teacher), probs)

    def predict_batch(self, samples, batch_size: int = INFERENCE_BATCH) -> BatchPrediction:
        """Agent-frame candidate paths for every sample (autoregressive, no graph)."""
        n, horizon = len(samples), self.cfg.horizon_frames
        trajectories = np.zeros((n, 3, horizon, 2))
        probs = np.zeros((n, 3))
        masks = np.zeros((n, 3), dtype=bool)
        with no_grad():
            for start in range(0, n, batch_size):
                rows = slice(start, min(start + batch_size, n))
                fused, per_lane = self.encode(samples.history[rows], samples.lanes[rows], samples.raster[rows])
                if not self.uses_lanes:
                    trajectories[rows, MIDDLE] = self.decode(fused).values
                    probs[rows, MIDDLE] = 1.0
                    masks[rows, MIDDLE] = True
                    continue
                mask = np.asarray(samples.lane_mask[rows], dtype=bool)
                probs[rows] = self.classify_lane(fused, mask).values
                masks[rows] = mask
                block = trajectories[rows]
                for slot in range(3):
                    present = np.flatnonzero(mask[:, slot])
                    if len(present) == 0:
                        continue
                    block[present, slot] = self.decode(fused[present], per_lane[present, slot, :]).values
        selected = np.argmax(probs, axis=1)
        return BatchPrediction(trajectories, probs, masks, selected)

    def describe(self) -> str:
        count = sum(p.size for p in self.parameters())
        return f"{self.cfg.variant_name}: {count} parameters"
