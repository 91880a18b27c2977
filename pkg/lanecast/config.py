# lanecast - Configuration

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

from lanecast.errors import ConfigError

# Base paths
BASE_DIR = Path(__file__).parent.parent
CACHE_DIR = BASE_DIR / ".cache" / "lanecast"

# Dataset layout
SPLIT_NAMES: List[str] = ["train", "val", "test"]
SPLIT_RATIOS: Tuple[int, int, int] = (8, 1, 1)
SCENE_GLOB = "scene_*.json"
MANIFEST_NAME = "manifest.json"
SAMPLES_NAME = "samples.npz"
FILTER_SUMMARY_NAME = "filter_summary.csv"
SCENE_SCHEMA_VERSION = 1

# Seeds
DEFAULT_SEED = 20240607
SEED_ENV_VAR = "LANECAST_SEED"

# Frame-time conventions (nuScenes annotations come at 2 Hz)
FRAME_RATE_HZ = 2.0
HISTORY_FRAMES = 4
HORIZON_FRAMES = 12
HORIZONS_S: List[int] = [1, 2, 3, 4, 5, 6]

# Below this per-frame displacement the heading is annotation jitter
STILL_EPSILON_M = 0.05

# Lane processing
LANE_SPACING_M = 5.0
LANE_SPACING_RANGE_M: Tuple[float, float] = (4.0, 6.0)
LANE_POINTS = 18
LANE_EXTENSION_M = 80.0
DIRECTION_THRESHOLD_DEG = 30.0
EXTENSION_SEARCH_RADIUS_M = 15.0
LANE_QUERY_RADIUS_M = 25.0
SAME_LANE_TOLERANCE_M = 1.0
MAX_REAR_POINTS = 2
LANE_SLOTS: List[str] = ["left", "middle", "right"]

# Occupancy crop fed to the 2D map encoder
RASTER_SIZE = 64
RASTER_CELL_M = 1.0

# Inputs are divided by this before entering the network
POSITION_NORMALIZER_M = 10.0

# Exit codes
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _coerce(value: str, target, name: str):
    """Convert a raw key-value string into the type of a dataclass default."""
    try:
        if isinstance(target, bool):
            lowered = value.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(target, int):
            return int(value)
        if isinstance(target, float):
            return float(value)
        if isinstance(target, tuple):
            items = [item.strip() for item in value.split(",") if item.strip()]
            if target and isinstance(target[0], (int, float)) and not isinstance(target[0], bool):
                kind = type(target[0])
                return tuple(kind(item) for item in items)
            return tuple(items)
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"Invalid value for '{name}': {value!r}") from exc


def load_key_values(path: Path) -> Dict[str, str]:
    """
    Read a plain-text key-value config file.

    Format: one ``key = value`` per line, ``#`` starts a comment, blank lines are
    ignored, lists are comma separated.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    values: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key '{key}'")
        values[key] = value.strip()
    return values


def dump_key_values(values: Mapping[str, object]) -> str:
    """Serialize a flat mapping into the key-value file format."""
    lines = []
    for key, value in values.items():
        if isinstance(value, (tuple, list)):
            value = ", ".join(str(item) for item in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


class _MappingConfig:
    """Mixin giving frozen config dataclasses key-value (de)serialization."""

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], strict: bool = True):
        defaults = cls()
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown and strict:
            raise ConfigError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}")
        kwargs = {}
        for name, raw in values.items():
            if name not in known:
                continue
            kwargs[name] = _coerce(raw, getattr(defaults, name), name) if isinstance(raw, str) else raw
        return cls(**kwargs)

    def to_mapping(self) -> Dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class KalmanConfig(_MappingConfig):
    """Noise model of the constant-velocity smoother."""
    process_noise_sigma: float = 0.5       # m/s^2
    measurement_noise_sigma: float = 0.3   # m
    initial_covariance_scale: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"KalmanConfig.{f.name} must be strictly positive")


@dataclass(frozen=True)
class AugmentConfig(_MappingConfig):
    """Rotation fan-out and turn upsampling."""
    rotation_step: float = 15.0
    rotation_count: int = 24
    turn_upsample_factor: int = 6
    turn_threshold: float = 30.0

    def __post_init__(self):
        if abs(self.rotation_step * self.rotation_count - 360.0) > 1e-9:
            raise ConfigError(
                f"rotation_step x rotation_count must equal 360, got "
                f"{self.rotation_step} x {self.rotation_count}"
            )
        if self.rotation_count < 1 or self.turn_upsample_factor < 1:
            raise ConfigError("AugmentConfig factors must be >= 1")
        if self.turn_threshold <= 0:
            raise ConfigError("turn_threshold must be positive")


TEMPLATES: Tuple[str, ...] = ("straight", "curve", "t_intersection", "crossroads")


@dataclass(frozen=True)
class GeneratorConfig(_MappingConfig):
    """Synthetic scene generator settings."""
    seed: int = DEFAULT_SEED
    n_scenes: int = 100
    templates: Tuple[str, ...] = TEMPLATES
    curve_radius_min: float = 30.0
    curve_radius_max: float = 60.0
    lanes_per_road_min: int = 1
    lanes_per_road_max: int = 3
    lane_width: float = 3.5
    road_length: float = 150.0
    chunk_length: float = 20.0
    speed_min: float = 5.0
    speed_max: float = 12.0
    noise_sigma: float = 0.1
    turn_fraction: float = 0.3
    successor_drop: float = 0.0
    parked_fraction: float = 0.0
    agents_per_scene: int = 4
    history_frames: int = HISTORY_FRAMES
    horizon_frames: int = HORIZON_FRAMES
    occupancy: bool = True

    def __post_init__(self):
        if self.chunk_length < 10:
            raise ConfigError("chunk_length must be >= 10 m")
        steps = self.chunk_length / LANE_SPACING_M
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(f"chunk_length must be a multiple of {LANE_SPACING_M:g} m, got {self.chunk_length:g}")
        if self.lane_width < 2.5:
            raise ConfigError("lane_width must be >= 2.5 m")
        if self.curve_radius_min < 10 or self.curve_radius_max < self.curve_radius_min:
            raise ConfigError("curve radius range must satisfy 10 <= min <= max")
        if not 1 <= self.lanes_per_road_min <= self.lanes_per_road_max <= 3:
            raise ConfigError("lanes_per_road must lie in 1..3")
        if not 0 < self.speed_min <= self.speed_max:
            raise ConfigError("speed range must be positive and ordered")
        for name in ("turn_fraction", "successor_drop", "parked_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.n_scenes < 1 or self.agents_per_scene < 1:
            raise ConfigError("n_scenes and agents_per_scene must be >= 1")
        if self.history_frames < 2 or self.horizon_frames < 1:
            raise ConfigError("history_frames must be >= 2 and horizon_frames >= 1")


MAP_MODES: Tuple[str, ...] = ("none", "occupancy", "lane")
REGRESSION_MODES: Tuple[str, ...] = ("AR", "NAR")


@dataclass(frozen=True)
class ModelConfig(_MappingConfig):
    """
    MTPP network hyper-parameters.

    Defaults are the desk-scale network; ``full_scale()`` returns the full-size
    sizes (6+6 layers, 8 heads, 512 feed-forward).
    """
    d_model: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 128
    fusion_dim: int = 128
    map_fc_dim: int = 32
    classifier_dims: Tuple[int, ...] = (256, 3)
    generator_dims: Tuple[int, ...] = (256, 2)
    occupancy_channels: int = 8
    lane_channels: int = 16
    alpha: float = 0.5
    horizon_frames: int = HORIZON_FRAMES
    history_frames: int = HISTORY_FRAMES
    map_mode: str = "lane"
    regression_mode: str = "AR"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.classifier_dims[-1] != 3:
            raise ConfigError("classifier output must be 3")
        if self.generator_dims[-1] != 2:
            raise ConfigError("generator output must be 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.map_mode not in MAP_MODES:
            raise ConfigError(f"map_mode must be one of {MAP_MODES}")
        if self.regression_mode not in REGRESSION_MODES:
            raise ConfigError(f"regression_mode must be one of {REGRESSION_MODES}")
        if self.history_frames < 2 or self.horizon_frames < 1:
            raise ConfigError("history_frames must be >= 2 and horizon_frames >= 1")
        if min(self.d_model, self.n_enc_layers, self.n_dec_layers, self.ff_dim,
               self.fusion_dim, self.map_fc_dim, self.occupancy_channels, self.lane_channels) < 1:
            raise ConfigError("model sizes must be positive")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        values = dict(d_model=512, n_enc_layers=6, n_dec_layers=6, n_heads=8,
                      ff_dim=512, fusion_dim=512)
        values.update(overrides)
        return cls(**values)

    @property
    def variant_name(self) -> str:
        return f"MTPP ({self.map_mode}, {self.regression_mode})"


@dataclass(frozen=True)
class TrainConfig(_MappingConfig):
    """Optimisation settings: gradient descent with per-step learning-rate decay."""
    learning_rate: float = 0.0005
    decay: float = 0.9999
    batch_size: int = 32
    epochs: int = 1
    grad_clip: float = 0.0
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError("decay must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0 or self.grad_clip < 0:
            raise ConfigError("batch_size >= 1, epochs >= 0 and grad_clip >= 0 required")


def resolve_seed(explicit: Optional[int] = None, environ: Optional[Mapping[str, str]] = None) -> int:
    """Explicit seed wins, then the LANECAST_SEED environment variable, then the default."""
    import os

    if explicit is not None:
        return int(explicit)
    env = os.environ if environ is None else environ
    raw = env.get(SEED_ENV_VAR)
    if raw:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc
    return DEFAULT_SEED


def frames_for_horizon(seconds: int, frame_rate_hz: float = FRAME_RATE_HZ) -> int:
    return int(round(seconds * frame_rate_hz))
