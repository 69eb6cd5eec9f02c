"""Prompt checkpoints.

Layout (little-endian)::

    b"DPCC" | u32 version=1 | 32-byte config digest | 32-byte encoder digest
    | u32 epoch | weight-archive entry block (count, then entries)

Entries are the prompt bank and its optimizer velocity; encoder weights are
never stored, only their digest.
"""
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dpc.errors import ArchiveError, DigestMismatch
from dpc.models import weights

logger = logging.getLogger(__name__)

MAGIC = b"DPCC"
VERSION = 1
BANK = "prompt_bank"
VELOCITY = "velocity.prompt_bank"


@dataclass
class Checkpoint:
    config_digest: str
    encoder_digest: str
    epoch: int
    prompt_bank: np.ndarray
    velocity: np.ndarray

    def check(self, config_digest: str, encoder_digest: str) -> None:
        if self.config_digest != config_digest:
            raise DigestMismatch("config", self.config_digest, config_digest)
        if self.encoder_digest != encoder_digest:
            raise DigestMismatch("encoder", self.encoder_digest, encoder_digest)


def dumps(checkpoint: Checkpoint) -> bytes:
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack("<I", VERSION))
    buffer.write(bytes.fromhex(checkpoint.config_digest))
    buffer.write(bytes.fromhex(checkpoint.encoder_digest))
    buffer.write(struct.pack("<I", checkpoint.epoch))
    weights.write_entries(buffer, {BANK: checkpoint.prompt_bank, VELOCITY: checkpoint.velocity})
    return buffer.getvalue()


def loads(data: bytes) -> Checkpoint:
    header = 4 + 4 + 32 + 32 + 4
    if len(data) < header:
        raise ArchiveError(f"truncated checkpoint: header needs {header} bytes, got {len(data)}")
    if data[:4] != MAGIC:
        raise ArchiveError(f"not a checkpoint: magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ArchiveError(f"unsupported checkpoint version {version}")
    config_digest = data[8:40].hex()
    encoder_digest = data[40:72].hex()
    (epoch,) = struct.unpack_from("<I", data, 72)
    tensors, offset = weights.read_entries(data, header)
    if offset != len(data):
        raise ArchiveError(f"{len(data) - offset} trailing bytes after byte offset {offset}")
    missing = [name for name in (BANK, VELOCITY) if name not in tensors]
    if missing:
        raise ArchiveError("checkpoint is missing entries", missing)
    return Checkpoint(config_digest, encoder_digest, epoch, tensors[BANK], tensors[VELOCITY])


def save_checkpoint(checkpoint: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(checkpoint))
    logger.info("checkpoint written to %s (epoch %d)", path, checkpoint.epoch)
    return path


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ArchiveError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads(data)
