"""Binary checkpoint format.

Layout (all integers little-endian):
  magic  b"GKBC"
  uint32 version (1)
  uint8  dtype code (0 = float32, 1 = float64)
  uint32 parameter count
  per parameter:
    uint16 name length, UTF-8 name bytes
    uint8  rank, uint32 dims[rank]
    raw little-endian IEEE-754 values, row-major
  uint8  optimizer-state flag
  if 1:  uint64 step, then per parameter (same order): m values, v values
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Adam, Parameter

MAGIC = b"GKBC"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


@dataclass
class AdamSnapshot:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def save_checkpoint(path, params: list[Parameter], adam: Adam | None = None) -> None:
    dtypes = {np.dtype(p.dtype) for p in params}
    if len(dtypes) != 1:
        raise CheckpointError(f"parameters must share one dtype, got {dtypes}")
    dtype = dtypes.pop()
    if dtype not in _CODES:
        raise CheckpointError(f"unsupported dtype {dtype}")
    code = _CODES[dtype]
    file_dtype = _DTYPES[code]

    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IBI", VERSION, code, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<B", p.value.ndim))
            fh.write(struct.pack(f"<{p.value.ndim}I", *p.value.shape))
            fh.write(np.ascontiguousarray(p.value, dtype=file_dtype).tobytes())
        if adam is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", adam.t))
            for p in params:
                st = adam.states[p.name]
                fh.write(np.ascontiguousarray(st.m, dtype=file_dtype).tobytes())
                fh.write(np.ascontiguousarray(st.v, dtype=file_dtype).tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], np.dtype, AdamSnapshot | None]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, code, count = struct.unpack_from("<IBI", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if code not in _DTYPES:
        raise CheckpointError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPES[code]
    off = 4 + struct.calcsize("<IBI")
    names: list[str] = []
    values: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype=dtype, count=n, offset=off).reshape(dims)
        off += n * dtype.itemsize
        names.append(name)
        values[name] = arr.copy()
    (flag,) = struct.unpack_from("<B", raw, off)
    off += 1
    adam = None
    if flag:
        (step,) = struct.unpack_from("<Q", raw, off)
        off += 8
        m: dict[str, np.ndarray] = {}
        v: dict[str, np.ndarray] = {}
        for name in names:
            n = values[name].size
            shape = values[name].shape
            m[name] = np.frombuffer(raw, dtype=dtype, count=n, offset=off).reshape(shape).copy()
            off += n * dtype.itemsize
            v[name] = np.frombuffer(raw, dtype=dtype, count=n, offset=off).reshape(shape).copy()
            off += n * dtype.itemsize
        adam = AdamSnapshot(step, m, v)
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return values, np.dtype(dtype.str[1:]), adam
