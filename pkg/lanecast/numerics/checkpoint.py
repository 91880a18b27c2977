"""
Checkpoint files.

Little-endian binary layout::

    magic   4 bytes  b"LCKP"
    version u32
    count   u32
    count x (name_len u32, name utf-8, rank u32, dims u32 * rank, values float64 * prod(dims))

The model configuration lives next to it in ``<checkpoint>.cfg`` as key = value lines.
"""

import logging
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np

from lanecast.config import dump_key_values, load_key_values
from lanecast.errors import ParseError, SchemaVersionMismatch

logger = logging.getLogger(__name__)

MAGIC = b"LCKP"
FORMAT_VERSION = 1
CONFIG_SUFFIX = ".cfg"


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, values in tensors.items():
        array = np.ascontiguousarray(values, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        parts.append(array.tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if blob[:4] != MAGIC:
        raise ParseError("not a lanecast checkpoint (bad magic)")
    offset = 4

    def take(fmt: str) -> Tuple:
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise ParseError(f"truncated checkpoint at byte {offset}")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    version, count = take("<II")
    if version != FORMAT_VERSION:
        raise SchemaVersionMismatch(f"checkpoint version {version}, expected {FORMAT_VERSION}")

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = take("<I")
        name = bytes(take(f"<{name_len}s")[0]).decode("utf-8")
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        end = offset + 8 * n
        if end > len(blob):
            raise ParseError(f"truncated values of tensor {name!r}")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(dims).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise ParseError(f"{len(blob) - offset} trailing bytes after {count} tensors")
    return tensors


def config_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + CONFIG_SUFFIX)


def save_checkpoint(path: Path, tensors: Mapping[str, np.ndarray], config: Dict[str, object]) -> Path:
    """Write weights and the config sidecar atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for target, payload in ((path, encode_checkpoint(tensors)),
                            (config_path(path), dump_key_values(config).encode("utf-8"))):
        temp_path = target.with_name(target.name + ".tmp")
        temp_path.write_bytes(payload)
        os.replace(temp_path, target)
    logger.info("Saved checkpoint %s (%d tensors)", path, len(tensors))
    return path


def load_checkpoint(path: Path) -> Tuple["OrderedDict[str, np.ndarray]", Dict[str, str]]:
    """Weights plus the raw key-value config of the sidecar."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read checkpoint ({exc})") from exc
    try:
        tensors = decode_checkpoint(blob)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return tensors, load_key_values(config_path(path))
