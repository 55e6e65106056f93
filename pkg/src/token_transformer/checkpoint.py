"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      6 bytes  b"TTCKPT"
    version    u32
    config     u32 length + UTF-8 JSON (sorted keys)
    tensors    u32 count, then per tensor:
                 u32 name length + UTF-8 name, u8 dtype code, u8 ndim,
                 ndim x u32 dims, raw little-endian data
    optimizer  u8 flag; if 1: u64 step, then two tensor tables (m, v)
    crc32      u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .errors import (
    BadMagicError,
    ConfigError,
    ConfigMismatchError,
    CorruptCheckpointError,
    DataError,
    ShapeMismatchError,
    TruncatedCheckpointError,
    VersionMismatchError,
)
from .model import TtModel, param_specs
from .optim import OptimState
from .tensor import Tensor

MAGIC = b"TTCKPT"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def _tensor_table(named: list) -> bytes:
    out = [struct.pack("<I", len(named))]
    for name, arr in named:
        arr = np.asarray(arr)
        code = DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise ValueError(f"cannot checkpoint dtype {arr.dtype} ({name})")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes())
    return b"".join(out)


def encode(model: TtModel, opt_state: OptimState | None = None) -> bytes:
    cfg_json = json.dumps(model.cfg.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg_json)), cfg_json,
             _tensor_table([(n, t.data) for n, t in model.named_parameters()])]
    if opt_state is None:
        parts.append(b"\x00")
    else:
        names = [n for n, _ in model.named_parameters()]
        parts.append(b"\x01" + struct.pack("<Q", opt_state.step))
        parts.append(_tensor_table([(n, opt_state.m[n]) for n in names]))
        parts.append(_tensor_table([(n, opt_state.v[n]) for n in names]))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, model: TtModel, opt_state: OptimState | None = None) -> None:
    data = encode(model, opt_state)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc.strerror}") from exc


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedCheckpointError(f"checkpoint truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> dict:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<I")
            try:
                name = self.take(n).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptCheckpointError("tensor name is not valid UTF-8") from exc
            code, ndim = self.unpack("<BB")
            if code not in DTYPES:
                raise CorruptCheckpointError(f"unknown dtype code {code} for {name}")
            shape = self.unpack(f"<{ndim}I")
            dtype = DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(self.take(size * dtype.itemsize), dtype=dtype).reshape(shape)
            out[name] = arr.astype(dtype.newbyteorder("="))
        return out


def decode(buf: bytes, cfg: ModelConfig | None = None):
    """Parse checkpoint bytes into (TtModel, OptimState | None).

    When ``cfg`` is given the stored config must equal it.
    """
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads {VERSION}")
    (n,) = r.unpack("<I")
    raw_cfg = r.take(n)
    tensors = r.table()
    (flag,) = r.unpack("<B")
    opt = None
    if flag == 1:
        (step,) = r.unpack("<Q")
        opt = OptimState(step, r.table(), r.table())
    elif flag != 0:
        raise CorruptCheckpointError(f"bad optimizer flag {flag}")
    body_end = r.pos
    (crc,) = r.unpack("<I")
    if r.pos != len(buf):
        raise CorruptCheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    if zlib.crc32(buf[:body_end]) != crc:
        raise CorruptCheckpointError("checksum mismatch")

    try:
        stored = ModelConfig.from_dict(json.loads(raw_cfg.decode("utf-8")))
    except (ValueError, ConfigError) as exc:
        raise CorruptCheckpointError(f"embedded config unreadable: {exc}") from exc
    if cfg is not None and cfg.to_dict() != stored.to_dict():
        diff = sorted(k for k, v in cfg.to_dict().items() if stored.to_dict().get(k) != v)
        raise ConfigMismatchError(f"checkpoint config differs in: {', '.join(diff)}")

    specs = param_specs(stored)
    problems = [f"missing {s.name}" for s in specs if s.name not in tensors]
    problems += [f"{s.name}: stored {tensors[s.name].shape}, expected {s.shape}"
                 for s in specs if s.name in tensors and tensors[s.name].shape != s.shape]
    known = {s.name for s in specs}
    problems += [f"unexpected {name}" for name in tensors if name not in known]
    if opt is not None:
        for table in (opt.m, opt.v):
            problems += [f"optimizer moment {s.name} missing or mis-shaped" for s in specs
                         if s.name not in table or table[s.name].shape != s.shape]
    if problems:
        raise ShapeMismatchError("; ".join(problems[:8]))
    params = {s.name: Tensor(tensors[s.name], requires_grad=True) for s in specs}
    return TtModel(stored, params), opt


def load_checkpoint(path, cfg: ModelConfig | None = None):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    return decode(buf, cfg)
