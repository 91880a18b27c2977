# Preprocess module for lanecast: smoothing, augmentation and occupancy crops
from .smoothing import smooth
from .augmentation import augment_scene, classify_turning
from .raster import agent_raster

__all__ = ["smooth", "augment_scene", "classify_turning", "agent_raster"]
