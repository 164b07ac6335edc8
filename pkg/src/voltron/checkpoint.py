"""VCKP checkpoint container.

Layout: ``b"VCKP"``, u32 version, u32 header length, a UTF-8 JSON header,
then the tensor payload, then a u32 CRC-32 of header and payload. Every
tensor is float32 row-major little-endian; the header indexes them by name,
shape and byte offset into the payload.
Files are written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .config import ModelConfig, model_config_text, parse_model_config
from .data import Vocabulary
from .errors import CheckpointError, VoltronError

MAGIC = b"VCKP"
VERSION = 1
_PREFIX = struct.Struct("<4sII")
_CRC = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    params: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)  # step, epoch, optimizer_steps
    rng: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        index, blobs, offset = [], [], 0
        for group, arrays in (("param", self.params), ("opt", self.optimizer)):
            for name in sorted(arrays):
                arr = np.ascontiguousarray(arrays[name], dtype="<f4")
                index.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
                blobs.append(arr.tobytes(order="C"))
                offset += arr.nbytes
        header = {
            "config": model_config_text(self.config),
            "vocab": self.vocab.tokens,
            "counters": {k: int(v) for k, v in sorted(self.counters.items())},
            "rng": self.rng,
            "extra": self.extra,
            "tensors": index,
            "payload_bytes": offset,
        }
        head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        body = head + b"".join(blobs)
        return _PREFIX.pack(MAGIC, VERSION, len(head)) + body + _CRC.pack(zlib.crc32(body))

    @classmethod
    def from_bytes(cls, blob: bytes, source: str = "<bytes>") -> "Checkpoint":
        if len(blob) < _PREFIX.size + _CRC.size:
            raise CheckpointError(f"{source}: truncated checkpoint")
        magic, version, head_len = _PREFIX.unpack_from(blob, 0)
        if magic != MAGIC:
            raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
        if version != VERSION:
            raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
        body = memoryview(blob)[_PREFIX.size:len(blob) - _CRC.size]
        (crc,) = _CRC.unpack_from(blob, len(blob) - _CRC.size)
        if zlib.crc32(body) != crc:
            raise CheckpointError(f"{source}: checksum mismatch (corrupt or truncated checkpoint)")
        start = _PREFIX.size + head_len
        try:
            header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{source}: corrupt header") from exc
        payload = memoryview(blob)[start:len(blob) - _CRC.size]
        if len(payload) != header.get("payload_bytes"):
            raise CheckpointError(f"{source}: payload is {len(payload)} bytes, header says "
                                  f"{header.get('payload_bytes')}")
        groups: Dict[str, Dict[str, np.ndarray]] = {"param": {}, "opt": {}}
        try:
            for entry in header["tensors"]:
                shape = tuple(entry["shape"])
                n = int(np.prod(shape, dtype=np.int64))
                arr = np.frombuffer(payload, dtype="<f4", count=n, offset=entry["offset"])
                groups[entry["group"]][entry["name"]] = arr.reshape(shape).astype(np.float32)
            config = parse_model_config(header["config"])
            vocab = Vocabulary(header["vocab"])
        except (KeyError, ValueError, TypeError, VoltronError) as exc:
            raise CheckpointError(f"{source}: corrupt checkpoint ({exc})") from exc
        return cls(config, vocab, groups["param"], groups["opt"], header.get("counters", {}),
                   header.get("rng", {}), header.get("extra", {}))

    def save(self, path) -> Path:
        return atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes(), str(path))


def atomic_write(path, data: bytes) -> Path:
    """Write to a temporary file in the target directory, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild a :class:`VoltronModel` carrying the checkpoint's exact parameters."""
    from .model import VoltronModel

    table = ckpt.params.get("encoder.lang_table")
    model = VoltronModel(ckpt.config, ckpt.vocab, language_table=table)
    try:
        model.load_state_dict(ckpt.params)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint parameters do not fit the model: {exc}") from exc
    model.encoder.lang_table.requires_grad = False
    return model


def load_model(path):
    return model_from_checkpoint(Checkpoint.load(path))
