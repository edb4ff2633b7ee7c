"""
Versioned binary checkpoints

Layout (all integers little-endian):
    magic        8 bytes  b"BPTDCKPT"
    version      u32
    model tag    u16 length + UTF-8
    dims         u32 count, then (u16 name length + name, i64 value) per entry
    arrays       u32 count, then per array:
                 u16 name length + name, u32 ndim, i64 per dim, float64 '<f8' data
Arrays are written in the order given, which each state fixes.
"""
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Tuple

import numpy as np

from src.core.errors import DataError

logger = logging.getLogger(__name__)

MAGIC = b"BPTDCKPT"
VERSION = 1


def _write_str(handle: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    handle.write(struct.pack("<H", len(raw)))
    handle.write(raw)


def _read_exact(handle: BinaryIO, n: int) -> bytes:
    data = handle.read(n)
    if len(data) != n:
        raise DataError("checkpoint is truncated")
    return data


def _read_str(handle: BinaryIO) -> str:
    (n,) = struct.unpack("<H", _read_exact(handle, 2))
    return _read_exact(handle, n).decode("utf-8")


def write_checkpoint(
    path: Path,
    model: str,
    dims: Mapping[str, int],
    arrays: Mapping[str, np.ndarray],
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", VERSION))
        _write_str(handle, model)
        handle.write(struct.pack("<I", len(dims)))
        for name, value in dims.items():
            _write_str(handle, name)
            handle.write(struct.pack("<q", int(value)))
        handle.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
            _write_str(handle, name)
            handle.write(struct.pack("<I", data.ndim))
            handle.write(struct.pack(f"<{data.ndim}q", *data.shape))
            handle.write(data.tobytes(order="C"))
    logger.debug(f"Wrote {model} checkpoint with {len(arrays)} arrays to {path}")
    return path


def read_checkpoint(path: Path) -> Tuple[str, Dict[str, int], "OrderedDict[str, np.ndarray]"]:
    """
    Returns:
        (model tag, dims, arrays in file order)

    Raises:
        DataError: wrong magic, unsupported version or truncated file
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as handle:
        if _read_exact(handle, len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(handle, 4))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        model = _read_str(handle)
        (n_dims,) = struct.unpack("<I", _read_exact(handle, 4))
        dims = {}
        for _ in range(n_dims):
            name = _read_str(handle)
            (dims[name],) = struct.unpack("<q", _read_exact(handle, 8))
        (n_arrays,) = struct.unpack("<I", _read_exact(handle, 4))
        arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(n_arrays):
            name = _read_str(handle)
            (ndim,) = struct.unpack("<I", _read_exact(handle, 4))
            shape = struct.unpack(f"<{ndim}q", _read_exact(handle, 8 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(handle, 8 * count), dtype="<f8")
            arrays[name] = data.reshape(shape).astype(np.float64)
    return model, dims, arrays
