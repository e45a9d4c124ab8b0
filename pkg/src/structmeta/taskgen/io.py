"""Binary container for task databases.

All integers and floats are little-endian.

    header    : magic b"SMDB", u16 version (=1), u16 flags, u32 K, u32 K_heldout
                flags bit 0: cluster block present; bit 1: family block present
    clusters  : K x i64                               (if flag bit 0)
    families  : K x (u32 byte length, utf-8 bytes)    (if flag bit 1)
    datasets  : K records, then K_heldout records (K_heldout is 0 or K)

    record    : u32 name length, utf-8 name, u8 kind (0 binary-task,
                1 multiclass-domain), u32 n_classes, u32 ndim, ndim x u32
                per-sample dims, u64 n, n*prod(dims) f64 inputs (row-major),
                n i64 labels
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .data import KINDS, Dataset, TaskDatabase

MAGIC = b"SMDB"
VERSION = 1
_HEADER = struct.Struct("<4sHHII")


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _pack_dataset(d: Dataset) -> bytes:
    shape = d.sample_shape
    parts = [
        _pack_str(d.name),
        struct.pack("<BII", KINDS.index(d.kind), d.n_classes, len(shape)),
        struct.pack(f"<{len(shape)}I", *shape),
        struct.pack("<Q", d.n),
        d.inputs.astype("<f8").tobytes(),
        d.labels.astype("<i8").tobytes(),
    ]
    return b"".join(parts)


def dumps_db(db: TaskDatabase) -> bytes:
    flags = (1 if db.ground_truth_clusters is not None else 0) | (2 if db.families is not None else 0)
    parts = [_HEADER.pack(MAGIC, VERSION, flags, db.K, len(db.heldout))]
    if db.ground_truth_clusters is not None:
        parts.append(db.ground_truth_clusters.astype("<i8").tobytes())
    if db.families is not None:
        parts.extend(_pack_str(f) for f in db.families)
    parts.extend(_pack_dataset(d) for d in db.datasets)
    parts.extend(_pack_dataset(d) for d in db.heldout)
    return b"".join(parts)


def save_db(db: TaskDatabase, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_db(db))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes, source: str):
        self.raw = raw
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.raw):
            raise FormatError(f"{self.source}: truncated file at byte {self.pos}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.source}: bad utf-8 string") from exc

    def dataset(self) -> Dataset:
        name = self.string()
        kind, n_classes, ndim = self.unpack("<BII")
        if kind >= len(KINDS):
            raise FormatError(f"{self.source}: unknown dataset kind {kind}")
        shape = self.unpack(f"<{ndim}I")
        (n,) = self.unpack("<Q")
        count = n * int(np.prod(shape, dtype=np.int64))
        inputs = np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape((n, *shape))
        labels = np.frombuffer(self.take(8 * n), dtype="<i8").astype(np.int64)
        return Dataset(inputs, labels, KINDS[kind], name, n_classes)


def loads_db(raw: bytes, source: str = "<bytes>") -> TaskDatabase:
    r = _Reader(raw, source)
    magic, version, flags, K, k_held = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if k_held not in (0, K):
        raise FormatError(f"{source}: heldout count {k_held} does not match K={K}")
    clusters = None
    if flags & 1:
        clusters = np.frombuffer(r.take(8 * K), dtype="<i8").astype(np.int64)
    families = [r.string() for _ in range(K)] if flags & 2 else None
    datasets = [r.dataset() for _ in range(K)]
    heldout = [r.dataset() for _ in range(k_held)]
    if r.pos != len(raw):
        raise FormatError(f"{source}: {len(raw) - r.pos} trailing bytes")
    return TaskDatabase(datasets, heldout, clusters, families)


def load_db(path) -> TaskDatabase:
    path = Path(path)
    return loads_db(path.read_bytes(), str(path))
