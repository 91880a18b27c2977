"""Deterministic 8:1:1 train / val / test split."""

import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np

from lanecast.config import SPLIT_NAMES, SPLIT_RATIOS
from lanecast.core.types import Scene
from lanecast.errors import TooFewScenes

logger = logging.getLogger(__name__)

MIN_SCENES = 10


def split_counts(n: int, ratios: Tuple[int, ...] = SPLIT_RATIOS) -> List[int]:
    """Largest-remainder allocation of ``n`` scenes; every split gets at least one."""
    total = sum(ratios)
    exact = [n * r / total for r in ratios]
    counts = [int(e) for e in exact]
    remainders = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in remainders[: n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        while counts[i] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split(scenes: Sequence[Scene], seed: int, ratios: Tuple[int, ...] = SPLIT_RATIOS) -> Dict[str, List[Scene]]:
    """Shuffle with ``seed`` and tag each scene with exactly one split."""
    if len(scenes) < MIN_SCENES:
        raise TooFewScenes(f"need at least {MIN_SCENES} scenes to split, got {len(scenes)}")
    order = np.random.default_rng(seed).permutation(len(scenes))
    out: Dict[str, List[Scene]] = {}
    start = 0
    for name, count in zip(SPLIT_NAMES, split_counts(len(scenes), ratios)):
        out[name] = [scenes[i].tagged(name) for i in order[start:start + count]]
        start += count
    logger.info("Split %d scenes: %s", len(scenes), ", ".join(f"{k}={len(v)}" for k, v in out.items()))
    return out
