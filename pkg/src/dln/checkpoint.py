"""Binary checkpoint format and the flat key=value manifest files.

Layout (all integers little-endian u32):

    b"DLN1" | version | count
    per entry: name_len | name (UTF-8) | trainable flag (1 byte) |
               rank | dims... | values (little-endian binary32, row-major)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .core import ParamStore, Tensor

MAGIC = b"DLN1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(store: ParamStore) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(store)))
    for name, t in store.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", 1 if t.trainable else 0))
        buf.write(struct.pack("<I", t.value.ndim))
        buf.write(struct.pack(f"<{t.value.ndim}I", *t.value.shape))
        buf.write(np.ascontiguousarray(t.value, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(data: bytes, dtype=np.float32) -> ParamStore:
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise CheckpointError("bad magic; not a DLN1 checkpoint")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, view, pos)
        pos += size
        return out

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    store = ParamStore()
    for _ in range(count):
        (n,) = take("<I")
        name = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        (flag,) = take("<B")
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        nbytes = 4 * int(np.prod(dims))
        if pos + nbytes > len(view):
            raise CheckpointError(f"truncated values for {name!r}")
        values = np.frombuffer(view[pos:pos + nbytes], dtype="<f4").reshape(dims)
        pos += nbytes
        store.add(name, Tensor(values.astype(dtype)), trainable=bool(flag))
    if pos != len(view):
        raise CheckpointError("trailing bytes after last entry")
    return store


def save(store: ParamStore, path) -> None:
    Path(path).write_bytes(dumps(store))


def load(path, dtype=np.float32) -> ParamStore:
    return loads(Path(path).read_bytes(), dtype=dtype)


def write_kv(path, entries: dict) -> None:
    lines = [f"{k}={v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
