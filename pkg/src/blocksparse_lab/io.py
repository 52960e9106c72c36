"""On-disk formats: binary/CSV matrices, canonical JSON, and the output manifest.

Binary matrix layout (little-endian, row-major)::

    b"SVOM" | u32 version=1 | u64 rows | u64 cols | rows*cols f64
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .numerics import as_matrix

MAGIC = b"SVOM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class FormatError(ValueError):
    pass


def matrix_bytes(m) -> bytes:
    m = as_matrix(m)
    rows, cols = m.shape
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + np.ascontiguousarray(m, dtype="<f8").tobytes()


def write_matrix(path, m) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(matrix_bytes(m))
    return path


def parse_matrix(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"{source}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    expected = _HEADER.size + 8 * rows * cols
    if len(buf) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(buf)}")
    data = np.frombuffer(buf, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return as_matrix(data.reshape(rows, cols), source)


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    return parse_matrix(path.read_bytes(), str(path))


def write_matrix_csv(path, m) -> Path:
    m = as_matrix(m)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(repr(float(v)) for v in row) for row in m]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    rows = [line.split(",") for line in path.read_text().splitlines() if line.strip()]
    if rows and len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: ragged rows")
    try:
        data = [[float(v) for v in r] for r in rows]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return as_matrix(np.array(data, dtype=np.float64).reshape(len(rows), -1), str(path))


def dumps(obj) -> str:
    """Canonical JSON text: fixed indentation, no NaN/Infinity literals, trailing newline."""
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj))
    return path


def read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Manifest:
    """Index of every file a command wrote under ``root``, with content hashes.

    Entries are keyed by relative path; saving sorts them so the manifest
    itself is deterministic.
    """

    FILENAME = "manifest.json"

    def __init__(self, root):
        self.root = Path(root)
        self.entries: dict[str, dict] = {}
        path = self.root / self.FILENAME
        if path.exists():
            for e in read_json(path).get("files", []):
                self.entries[e["path"]] = e

    def add(self, path, kind: str, **meta) -> dict:
        rel = Path(path).resolve().relative_to(self.root.resolve()).as_posix()
        entry = {"path": rel, "kind": kind, **meta, "sha256": sha256_file(path)}
        self.entries[rel] = entry
        return entry

    def of_kind(self, kind: str) -> list[dict]:
        return [e for _, e in sorted(self.entries.items()) if e["kind"] == kind]

    def save(self) -> Path:
        return write_json(self.root / self.FILENAME,
                          {"files": [e for _, e in sorted(self.entries.items())]})
