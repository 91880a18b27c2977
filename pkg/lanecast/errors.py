"""Exception hierarchy; every error knows the CLI exit code it maps to."""


class LanecastError(Exception):
    """Base class for all lanecast failures."""

    exit_code = 1


class ConfigError(LanecastError):
    exit_code = 2


class DataError(LanecastError):
    exit_code = 3


class NumericError(LanecastError):
    exit_code = 4


# Geometry / domain types
class InvariantViolation(DataError):
    """A domain value broke one of its construction invariants."""


class StationaryAgent(DataError):
    """No frame pair of the trajectory moves more than the stillness threshold."""


class DegenerateDirection(DataError):
    """A direction vector of zero length was given where an angle is needed."""


# Lane processing
class NoLaneForAgent(DataError):
    """No direction-compatible lane remains around the agent."""


class AgentFiltered(DataError):
    """The agent cannot be turned into a model sample."""

    REASONS = ("stationary", "wrong_direction", "no_lane", "extension_failed", "short_track")

    def __init__(self, reason: str, message: str = ""):
        if reason not in self.REASONS:
            raise ValueError(f"unknown filter reason {reason!r}")
        self.reason = reason
        super().__init__(message or reason)


# Tensor engine
class ShapeMismatch(NumericError):
    pass


class NonScalarLoss(NumericError):
    pass


class StaleTape(NumericError):
    """backward() reached a graph that was already consumed."""


class MissingGradient(NumericError):
    pass


# Model
class WrongRasterSize(NumericError):
    pass


class MaskedLaneRequested(DataError):
    pass


class MaskedGroundTruthLane(DataError):
    pass


class EmptyDataset(DataError):
    pass


class HorizonTooLong(DataError):
    pass


# Data IO
class ParseError(DataError):
    pass


class SchemaVersionMismatch(DataError):
    pass


class InvalidTemplate(ConfigError):
    pass


class TooFewScenes(DataError):
    pass
