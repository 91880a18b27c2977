"""Agent-centred occupancy crops sampled from the scene raster."""

import numpy as np

from lanecast.config import RASTER_CELL_M, RASTER_SIZE
from lanecast.core.geometry import from_agent_frame
from lanecast.core.types import Direction2, OccupancyRaster, Point2


def agent_raster(raster: OccupancyRaster, origin: Point2, heading: Direction2,
                 size: int = RASTER_SIZE, cell: float = RASTER_CELL_M) -> np.ndarray:
    """
    (size, size) boolean crop in the agent frame: row r runs along the heading,
    column c to the left of it, and the agent sits at the crop centre. Each cell
    takes the scene cell under its centre; outside the scene raster is not drivable.
    """
    half = size / 2.0
    centers = (np.arange(size) + 0.5) * cell - half * cell
    along, across = np.meshgrid(centers, centers, indexing="ij")
    local = np.stack([along, across], axis=-1)
    return raster.lookup(from_agent_frame(local, origin, heading))
