"""
Binary checkpoint codec.

Handles:
- TransD files: fixed header (magic, version, |E|, |R|, d) + four float64 tensors
- KGEP files: header, length-prefixed JSON config snapshot, seed, named tensors
- All numbers little-endian; tensors row-major 64-bit floats
"""

import json
import os
import struct
from typing import Any, BinaryIO, Dict, Tuple

import numpy as np
from loguru import logger

from app.exceptions import CheckpointError


TRANSD_MAGIC = b"KGTD"
KGEP_MAGIC = b"KGEP"
FORMAT_VERSION = 1

_TRANSD_HEADER = struct.Struct("<4sIqqq")
_KGEP_HEADER = struct.Struct("<4sI")
_F8 = np.dtype("<f8")


def _read_exact(f: BinaryIO, n: int, path: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"{path}: truncated checkpoint")
    return data


def _write_array(f: BinaryIO, array: np.ndarray) -> None:
    f.write(np.ascontiguousarray(array, dtype=_F8).tobytes(order="C"))


def _read_array(f: BinaryIO, shape: Tuple[int, ...], path: str) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(f, count * _F8.itemsize, path)
    return np.frombuffer(raw, dtype=_F8).astype(np.float64).reshape(shape)


# ===== TRANSD =====

TRANSD_TENSORS = ("entity_vec", "entity_proj", "relation_vec", "relation_proj")


def write_transd_checkpoint(path: str, tensors: Dict[str, np.ndarray]) -> None:
    """Write the four TransD tensors under the fixed header"""
    n_entities, dim = tensors["entity_vec"].shape
    n_relations = tensors["relation_vec"].shape[0]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(_TRANSD_HEADER.pack(TRANSD_MAGIC, FORMAT_VERSION, n_entities, n_relations, dim))
        for name in TRANSD_TENSORS:
            _write_array(f, tensors[name])
    logger.info(f"Wrote TransD checkpoint {path} (|E|={n_entities}, |R|={n_relations}, d={dim})")


def read_transd_checkpoint(path: str) -> Dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        magic, version, n_entities, n_relations, dim = _TRANSD_HEADER.unpack(
            _read_exact(f, _TRANSD_HEADER.size, path)
        )
        if magic != TRANSD_MAGIC:
            raise CheckpointError(f"{path}: not a TransD checkpoint (magic {magic!r})")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        shapes = {
            "entity_vec": (n_entities, dim),
            "entity_proj": (n_entities, dim),
            "relation_vec": (n_relations, dim),
            "relation_proj": (n_relations, dim),
        }
        tensors = {name: _read_array(f, shapes[name], path) for name in TRANSD_TENSORS}
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after tensors")
    return tensors


# ===== KGEP =====

def write_model_checkpoint(path: str, config: Dict[str, Any], seed: int, tensors: Dict[str, np.ndarray]) -> None:
    """
    Versioned model file.

    Layout: magic, version, u64 JSON length, JSON bytes, i64 seed, u32 tensor
    count, then per tensor: u32 name length, name, u32 ndim, i64 dims, data.
    Tensors are written in sorted name order.
    """
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(_KGEP_HEADER.pack(KGEP_MAGIC, FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<q", seed))
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            array = np.asarray(tensors[name], dtype=_F8)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", array.ndim))
            f.write(struct.pack(f"<{array.ndim}q", *array.shape))
            _write_array(f, array)
    logger.info(f"Wrote model checkpoint {path} ({len(tensors)} tensors)")


def read_model_checkpoint(path: str) -> Tuple[Dict[str, Any], int, Dict[str, np.ndarray]]:
    """Returns (config snapshot, seed, tensors)"""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        magic, version = _KGEP_HEADER.unpack(_read_exact(f, _KGEP_HEADER.size, path))
        if magic != KGEP_MAGIC:
            raise CheckpointError(f"{path}: not a KGEP checkpoint (magic {magic!r})")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (blob_len,) = struct.unpack("<Q", _read_exact(f, 8, path))
        try:
            config = json.loads(_read_exact(f, blob_len, path).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: corrupt config snapshot: {e}") from e
        (seed,) = struct.unpack("<q", _read_exact(f, 8, path))
        (count,) = struct.unpack("<I", _read_exact(f, 4, path))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, path))
            name = _read_exact(f, name_len, path).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4, path))
            shape = struct.unpack(f"<{ndim}q", _read_exact(f, 8 * ndim, path))
            tensors[name] = _read_array(f, tuple(shape), path)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after tensors")
    return config, seed, tensors
