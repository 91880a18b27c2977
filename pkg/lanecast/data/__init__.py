# Data module for lanecast: scene files, synthetic generator, splits and samples
from .scene_io import load_scene, load_scenes, save_scene
from .dataset import FilterStats, SampleSet, build_samples, filter_summary
from .generator import generate, generate_scene, write_dataset
from .split import split

__all__ = [
    "load_scene",
    "load_scenes",
    "save_scene",
    "FilterStats",
    "SampleSet",
    "build_samples",
    "filter_summary",
    "generate",
    "generate_scene",
    "write_dataset",
    "split",
]
