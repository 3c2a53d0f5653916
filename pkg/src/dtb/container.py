"""Binary container for named float32 arrays plus a JSON metadata block.

Layout (little-endian)::

    magic[4] | u32 version | u32 n_arrays
    per array: u32 name_len | name (utf-8) | u8 dtype code | u8 ndim | u32 dims[ndim] | f32 data
    u32 json_len | json (utf-8)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

VERSION = 1
DTYPE_F32 = 1


class FormatError(ValueError):
    pass


def dumps(magic: bytes, arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    out = [struct.pack("<4sII", magic, VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f4")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<BB{a.ndim}I", DTYPE_F32, a.ndim, *a.shape))
        out.append(a.tobytes())
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes, source: str):
        self.buf, self.pos, self.source = buf, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.source}: truncated at byte {self.pos} (need {n} more)")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def loads(magic: bytes, buf: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(buf, source)
    got, version, n = r.unpack("<4sII")
    if got != magic:
        raise FormatError(f"{source}: bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported format version {version}")
    arrays = {}
    for _ in range(n):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code != DTYPE_F32:
            raise FormatError(f"{source}: array {name!r} has unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}I")
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        arrays[name] = data.astype(np.float32)
    (json_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(json_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: corrupt metadata block: {exc}") from None
    if r.pos != len(buf):
        raise FormatError(f"{source}: {len(buf) - r.pos} trailing bytes")
    return arrays, meta


def save(path, magic: bytes, arrays: dict[str, np.ndarray], meta: dict) -> None:
    Path(path).write_bytes(dumps(magic, arrays, meta))


def load(path, magic: bytes) -> tuple[dict[str, np.ndarray], dict]:
    return loads(magic, Path(path).read_bytes(), str(path))
