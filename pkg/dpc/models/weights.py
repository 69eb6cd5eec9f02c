"""Binary weight archive.

Layout (all integers little-endian)::

    b"DPCW" | u32 version=1 | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 rank | u32 extent * rank
                | float32 values, row-major

The entry block after the header is shared with checkpoint files.
"""
import hashlib
import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Tuple, Union

import numpy as np

from dpc.errors import ArchiveError

MAGIC = b"DPCW"
VERSION = 1

PathLike = Union[str, Path]


def write_entries(stream: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    stream.write(struct.pack("<I", len(tensors)))
    for name, values in tensors.items():
        encoded = name.encode("utf-8")
        values = np.ascontiguousarray(values, dtype="<f4")
        stream.write(struct.pack("<H", len(encoded)))
        stream.write(encoded)
        stream.write(struct.pack("<B", values.ndim))
        stream.write(struct.pack(f"<{values.ndim}I", *values.shape))
        stream.write(values.tobytes(order="C"))


def _take(data: bytes, offset: int, size: int, what: str) -> Tuple[bytes, int]:
    if offset + size > len(data):
        raise ArchiveError(
            f"truncated archive: {what} needs {size} bytes at byte offset {offset}, "
            f"only {len(data) - offset} remain")
    return data[offset:offset + size], offset + size


def read_entries(data: bytes, offset: int) -> Tuple["OrderedDict[str, np.ndarray]", int]:
    raw, offset = _take(data, offset, 4, "tensor count")
    (count,) = struct.unpack("<I", raw)
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        raw, offset = _take(data, offset, 2, "name length")
        (name_len,) = struct.unpack("<H", raw)
        raw, offset = _take(data, offset, name_len, "tensor name")
        name = raw.decode("utf-8")
        raw, offset = _take(data, offset, 1, f"rank of {name}")
        (rank,) = struct.unpack("<B", raw)
        raw, offset = _take(data, offset, 4 * rank, f"extents of {name}")
        shape = struct.unpack(f"<{rank}I", raw)
        count_values = int(np.prod(shape)) if rank else 1
        raw, offset = _take(data, offset, 4 * count_values, f"values of {name}")
        if name in tensors:
            raise ArchiveError("duplicate tensor name", [name])
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    return tensors, offset


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack("<I", VERSION))
    write_entries(buffer, tensors)
    return buffer.getvalue()


def loads(data: bytes) -> "OrderedDict[str, np.ndarray]":
    raw, offset = _take(data, 0, 4, "magic")
    if raw != MAGIC:
        raise ArchiveError(f"not a weight archive: magic {raw!r}")
    raw, offset = _take(data, offset, 4, "version")
    (version,) = struct.unpack("<I", raw)
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    tensors, offset = read_entries(data, offset)
    if offset != len(data):
        raise ArchiveError(f"{len(data) - offset} trailing bytes after byte offset {offset}")
    return tensors


def save_archive(path: PathLike, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(tensors))
    return path


def load_archive(path: PathLike) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())


def validate_against(tensors: Mapping[str, np.ndarray], expected: Mapping[str, Tuple[int, ...]]) -> None:
    """Reject an archive whose names or shapes differ from ``expected``, naming every offender."""
    missing = [name for name in expected if name not in tensors]
    extra = [name for name in tensors if name not in expected]
    wrong = [f"{name} {tuple(tensors[name].shape)} != {tuple(shape)}"
             for name, shape in expected.items()
             if name in tensors and tuple(tensors[name].shape) != tuple(shape)]
    problems = [f"missing {n}" for n in missing] + [f"unexpected {n}" for n in extra] + [f"shape {w}" for w in wrong]
    if problems:
        raise ArchiveError("archive does not match encoder configuration", problems)


def digest(tensors: Mapping[str, np.ndarray]) -> str:
    return hashlib.sha256(dumps(tensors)).hexdigest()


def snapshot(tensors: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {name: np.array(values, copy=True) for name, values in tensors.items()}
