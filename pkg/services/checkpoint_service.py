"""
Checkpoint Service — binary container for network weights, optimizer state
and the training snapshot.

Layout (all integers little-endian):
  b"DLMA"  u32 version
  repeated records until end of file:
    u32 name length, name (utf-8)
    u8 dtype tag (1 = float32, 2 = utf-8 bytes), u8 rank, u32 × rank dims
    payload (row-major; float32 little-endian for tag 1)
    u32 CRC32 of everything above in this record
The first record is "meta": JSON with the iteration, the Adam step counts
and the TrainConfig.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import zlib
from pathlib import Path
from typing import Dict, Iterator, Tuple, Union

import numpy as np

from models.train_config import CHECKPOINT_VERSION, Checkpoint, TrainConfig
from utils.errors import CheckpointError, CheckpointVersionError, CorruptCheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"DLMA"
TAG_FLOAT32 = 1
TAG_BYTES = 2
META = "meta"

SECTIONS = (("G/", "generator"), ("D/", "discriminator"), ("optG/", "opt_g"), ("optD/", "opt_d"))


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

def _record(name: str, tag: int, dims: Tuple[int, ...], payload: bytes) -> bytes:
    encoded = name.encode("utf-8")
    head = struct.pack("<I", len(encoded)) + encoded + struct.pack("<BB", tag, len(dims))
    head += struct.pack(f"<{len(dims)}I", *dims)
    body = head + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _array_record(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return _record(name, TAG_FLOAT32, tuple(arr.shape), arr.tobytes())


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = json.dumps(
        {
            "iteration": int(ckpt.iteration),
            "optimizer_steps": {name: int(n) for name, n in ckpt.optimizer_steps.items()},
            "config": ckpt.config.to_dict(),
        },
        sort_keys=True,
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), _record(META, TAG_BYTES, (len(meta),), meta)]
    for prefix, attr in SECTIONS:
        for name, arr in getattr(ckpt, attr).items():
            parts.append(_array_record(prefix + name, arr))
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(ckpt)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    logger.info(f"Saved checkpoint {path} (iteration {ckpt.iteration}, {len(blob)} bytes)")
    return path


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpointError(f"truncated checkpoint at byte {self.pos} (needed {n} more)")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    @property
    def done(self) -> bool:
        return self.pos >= len(self.blob)


def _records(reader: _Reader) -> Iterator[Tuple[str, int, Tuple[int, ...], bytes]]:
    while not reader.done:
        start = reader.pos
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8", errors="replace")
        tag, rank = reader.unpack("<BB")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims)) if dims else 1
        if tag == TAG_FLOAT32:
            payload = reader.take(4 * count)
        elif tag == TAG_BYTES:
            payload = reader.take(count)
        else:
            raise CorruptCheckpointError(f"record {name!r} has unknown dtype tag {tag}")
        body = reader.blob[start:reader.pos]
        (crc,) = reader.unpack("<I")
        if zlib.crc32(body) & 0xFFFFFFFF != crc:
            raise CorruptCheckpointError(f"checksum mismatch in record {name!r}")
        yield name, tag, tuple(dims), payload


def decode_checkpoint(blob: bytes) -> Checkpoint:
    reader = _Reader(blob)
    if reader.take(4) != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic)")
    (version,) = reader.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )

    meta = None
    sections: Dict[str, Dict[str, np.ndarray]] = {attr: {} for _, attr in SECTIONS}
    for name, tag, dims, payload in _records(reader):
        if name == META:
            meta = json.loads(payload.decode("utf-8"))
            continue
        for prefix, attr in SECTIONS:
            if name.startswith(prefix):
                arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
                sections[attr][name[len(prefix):]] = arr
                break
        else:
            logger.warning(f"Ignoring unknown checkpoint record {name!r}")
    if meta is None:
        raise CorruptCheckpointError("checkpoint has no metadata record")

    return Checkpoint(
        iteration=int(meta.get("iteration", 0)),
        config=TrainConfig.from_dict(meta.get("config") or {}),
        version=version,
        optimizer_steps={name: int(n) for name, n in (meta.get("optimizer_steps") or {}).items()},
        **sections,
    )


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    ckpt = decode_checkpoint(blob)
    logger.info(f"Loaded checkpoint {path} (iteration {ckpt.iteration})")
    return ckpt
