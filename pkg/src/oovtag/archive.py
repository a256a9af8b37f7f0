"""Binary named-tensor model archives.

Layout (all integers little-endian)::

    b"OOVD"  u32 version  u16 len + component tag (utf-8)
    u32 n_tensors, then per tensor:
        u16 len + name (utf-8)  u8 rank  u32 dims[rank]  float32 values (row-major)
    u64 len + JSON trailer (utf-8, sorted keys)
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"OOVD"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    pass


@dataclass
class ModelArchive:
    component: str
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def require(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise ArchiveError(f"archive ({self.component}) is missing tensor {name!r}") from None


def dumps(archive: ModelArchive) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", archive.version))
    tag = archive.component.encode("utf-8")
    buf.write(struct.pack("<H", len(tag)) + tag)
    buf.write(struct.pack("<I", len(archive.tensors)))
    for name, value in archive.tensors.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    trailer = json.dumps(archive.meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    buf.write(struct.pack("<Q", len(trailer)) + trailer)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ArchiveError("corrupt-archive: unexpected end of file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> ModelArchive:
    if data[:4] != MAGIC:
        raise ArchiveError("not-a-model-archive")
    r = _Reader(data)
    r.take(4)
    (version,) = r.unpack("<I")
    if version > FORMAT_VERSION:
        raise ArchiveError(f"unsupported-version: {version} (reader supports {FORMAT_VERSION})")
    try:
        (n,) = r.unpack("<H")
        component = r.take(n).decode("utf-8")
        (count,) = r.unpack("<I")
        tensors = {}
        for _ in range(count):
            (n,) = r.unpack("<H")
            name = r.take(n).decode("utf-8")
            (rank,) = r.unpack("<B")
            dims = r.unpack(f"<{rank}I")
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            values = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
            tensors[name] = values.astype(np.float64)
        (n,) = r.unpack("<Q")
        try:
            meta = json.loads(r.take(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise ArchiveError("corrupt-archive: unreadable trailer") from None
        if r.pos != len(data):
            raise ArchiveError("corrupt-archive: trailing bytes")
    except UnicodeDecodeError:
        raise ArchiveError("corrupt-archive: undecodable name") from None
    return ModelArchive(component, tensors, meta, version)


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_model(path, archive: ModelArchive) -> None:
    atomic_write_bytes(path, dumps(archive))


def load_model(path) -> ModelArchive:
    return loads(Path(path).read_bytes())
