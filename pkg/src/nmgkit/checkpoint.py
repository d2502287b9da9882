"""Checkpoint files for per-level smoother parameters.

Layout (all integers little-endian)::

    magic  b"NMGCKPT\\0"
    u32    format version
    u32    tensor count
    per tensor:
        u16 name length, name (utf-8)
        u8  rank, u64 * rank shape
        float64 LE payload
    u64    metadata length, metadata (utf-8 JSON)
    magic  b"NMGEND\\0\\0"

Tensor names are ``"<level>/<param name>"``.  Metadata carries the FNO
configuration of every level, the problem digest, ``L``, the training seed
and anything else passed in ``extra``.
"""
from __future__ import annotations

import io
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .fno import FnoConfig, FnoSmoother, Params, check_params

MAGIC = b"NMGCKPT\0"
END = b"NMGEND\0\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    smoothers: Dict[int, FnoSmoother]
    L: int
    problem_digest: str
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "L": self.L,
            "problem_digest": self.problem_digest,
            "seed": self.seed,
            "configs": {str(l): s.cfg.to_dict() for l, s in sorted(self.smoothers.items())},
            "extra": self.extra,
        }


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    tensors = []
    for level, sm in sorted(ckpt.smoothers.items()):
        for name in sorted(sm.params):
            tensors.append((f"{level}/{name}", sm.params[name]))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    meta = json.dumps(ckpt.metadata(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(meta)))
    buf.write(meta)
    buf.write(END)
    path.write_bytes(buf.getvalue())
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError("corrupt checkpoint: unexpected end of file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected_digest: Optional[str] = None, strict: bool = True) -> Checkpoint:
    """Read a checkpoint; a digest mismatch raises when ``strict`` and warns otherwise."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("corrupt checkpoint: bad magic")
    version, count = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    raw: Dict[int, Params] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("corrupt checkpoint: bad tensor name") from None
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}Q")
        size = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(float)
        level, _, pname = name.partition("/")
        if not level.isdigit() or not pname:
            raise CheckpointError(f"corrupt checkpoint: bad tensor name {name!r}")
        raw.setdefault(int(level), {})[pname] = arr
    (mlen,) = r.unpack("<Q")
    try:
        meta = json.loads(r.take(mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError("corrupt checkpoint: unreadable metadata") from None
    if r.take(len(END)) != END or r.pos != len(r.data):
        raise CheckpointError("corrupt checkpoint: bad trailer")

    smoothers = {}
    for key, cfg_dict in meta["configs"].items():
        level = int(key)
        cfg = FnoConfig.from_dict(cfg_dict)
        params = raw.pop(level, None)
        if params is None:
            raise CheckpointError(f"corrupt checkpoint: no tensors for level {level}")
        try:
            check_params(params, cfg)
        except Exception as exc:
            raise CheckpointError(f"corrupt checkpoint: level {level}: {exc}") from None
        smoothers[level] = FnoSmoother(cfg, params)
    if raw:
        raise CheckpointError(f"corrupt checkpoint: tensors for unknown levels {sorted(raw)}")

    digest = meta["problem_digest"]
    if expected_digest is not None and digest != expected_digest:
        msg = f"checkpoint was trained for problem {digest}, not {expected_digest}"
        if strict:
            raise CheckpointError(msg)
        warnings.warn(msg, stacklevel=2)
    return Checkpoint(smoothers, int(meta["L"]), digest, meta.get("seed"), meta.get("extra", {}))
