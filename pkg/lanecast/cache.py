"""Persistent cache for preprocessed per-scene samples."""

from __future__ import annotations

import hashlib
import logging
import pickle
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

from lanecast import config

logger = logging.getLogger(__name__)

CACHE_VERSION = "samples-v1"


@dataclass(frozen=True)
class CacheLoadResult:
    """Result wrapper for a cached or freshly built artefact."""

    data: Any
    status: str
    elapsed_seconds: float
    path: Optional[Path]


def get_cache_key(kind: str, content: bytes, version: str = CACHE_VERSION) -> str:
    """Build a stable cache key from content, artefact kind and builder version."""
    content_hash = hashlib.sha256(content).hexdigest()
    metadata = f"{version}|{kind}|{content_hash}".encode("utf-8")
    return hashlib.sha256(metadata).hexdigest()


def get_cache_path(kind: str, content: bytes, version: str = CACHE_VERSION,
                   cache_dir: Optional[Path] = None) -> Path:
    safe_kind = "".join(ch.lower() if ch.isalnum() else "_" for ch in kind).strip("_")
    root = Path(cache_dir) if cache_dir is not None else config.CACHE_DIR
    return root / f"{safe_kind}-{get_cache_key(kind, content, version)}.pickle"


def load_or_build(
    kind: str,
    content: bytes,
    builder: Callable[[], Any],
    version: str = CACHE_VERSION,
    cache_dir: Optional[Path] = None,
    enabled: bool = True,
) -> CacheLoadResult:
    """
    Load a built artefact from the disk cache or build and cache it.

    ``content`` is the raw input the artefact is derived from (for example the
    scene file bytes plus the serialized configs). Unreadable entries are removed
    and rebuilt. With ``enabled=False`` the builder always runs and nothing is
    written.
    """
    start = time.perf_counter()
    if not enabled:
        data = builder()
        return CacheLoadResult(data=data, status="built", elapsed_seconds=time.perf_counter() - start, path=None)

    cache_path = get_cache_path(kind, content, version, cache_dir)
    if cache_path.exists():
        try:
            with cache_path.open("rb") as handle:
                data = pickle.load(handle)
            logger.debug("Cache hit for %s: %s", kind, cache_path.name)
            return CacheLoadResult(data=data, status="cache", elapsed_seconds=time.perf_counter() - start,
                                   path=cache_path)
        except Exception:
            logger.debug("Discarding unreadable cache entry %s", cache_path)
            cache_path.unlink(missing_ok=True)

    logger.debug("Cache miss for %s", kind)
    data = builder()
    elapsed = time.perf_counter() - start

    if data is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        tmp_path = cache_path.with_suffix(".tmp")
        with tmp_path.open("wb") as handle:
            pickle.dump(data, handle, protocol=pickle.HIGHEST_PROTOCOL)
        tmp_path.replace(cache_path)

    return CacheLoadResult(data=data, status="built", elapsed_seconds=elapsed, path=cache_path)
