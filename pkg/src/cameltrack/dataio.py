"""On-disk formats: MOTChallenge text files, cue stores, model weights.

Binary files are little-endian with 32-bit float payloads; everything is
widened to float64 once in memory.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CUE_MAGIC = b"CAMELCUE"
CUE_VERSION = 1
WTS_MAGIC = b"CAMELWTS"
WTS_VERSION = 1


class ParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class BadMagic(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class Truncated(ValueError):
    pass


# ---------------------------------------------------------------- MOT text


@dataclass(frozen=True, order=True)
class MotRecord:
    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    conf: float = 1.0
    a: float = -1.0
    b: float = -1.0
    c: float = -1.0

    @property
    def valid(self):
        return self.frame >= 1 and self.w > 0 and self.h > 0

    def tlwh(self):
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)


def _as_int(token):
    v = float(token)
    if not v.is_integer():
        raise ValueError(f"{token!r} is not an integer")
    return int(v)


def parse_mot(stream):
    """Parse MOTChallenge comma-separated records. ``stream`` is a text
    stream, a string, or any iterable of lines."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if not 6 <= len(parts) <= 10:
            raise ParseError(lineno, f"expected 6-10 fields, got {len(parts)}")
        try:
            frame = _as_int(parts[0])
            ident = _as_int(parts[1])
            nums = [float(p) for p in parts[2:]]
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if not all(np.isfinite(nums)):
            raise ParseError(lineno, "non-finite value")
        if frame < 1:
            raise ParseError(lineno, f"frame must be >= 1, got {frame}")
        nums += [1.0] if len(nums) == 4 else []
        nums += [-1.0] * (8 - len(nums))
        records.append(MotRecord(frame, ident, *nums))
    return records


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def emit_mot(records) -> str:
    """Serialize records sorted by (frame, id)."""
    lines = []
    for r in sorted(records, key=lambda r: (r.frame, r.id)):
        fields = [str(r.frame), str(r.id)] + [_fmt(v) for v in (r.x, r.y, r.w, r.h, r.conf, r.a, r.b, r.c)]
        lines.append(",".join(fields))
    return "".join(line + "\n" for line in lines)


def read_mot(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_mot(fh)


def write_mot(path, records):
    Path(path).write_text(emit_mot(records), encoding="utf-8")


def group_by_frame(records):
    frames = {}
    for r in records:
        frames.setdefault(r.frame, []).append(r)
    return frames


# ---------------------------------------------------------------- cue store

_CUE_HEADER = struct.Struct("<8sIIII")


@dataclass
class CueStore:
    cue_id: int
    width: int
    keys: np.ndarray = field(default=None)
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        keys = np.zeros((0, 2), dtype=np.uint32) if self.keys is None else self.keys
        values = np.zeros((0, self.width)) if self.values is None else self.values
        self.keys = np.asarray(keys, dtype=np.uint32).reshape(-1, 2)
        # on-disk precision is the store's precision
        self.values = np.asarray(values, dtype=np.float32).astype(np.float64).reshape(-1, self.width)
        if len(self.keys) != len(self.values):
            raise ValueError("keys and values disagree in length")
        self._index = {(int(f), int(i)): row for row, (f, i) in enumerate(self.keys)}
        if len(self._index) != len(self.keys):
            raise ValueError("duplicate (frame, det_index) key in cue store")

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return key in self._index

    def get(self, frame, det_index):
        return self.values[self._index[(frame, det_index)]]

    def __eq__(self, other):
        return (
            isinstance(other, CueStore)
            and self.cue_id == other.cue_id
            and self.width == other.width
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def from_rows(cls, cue_id, width, rows):
        """rows: iterable of (frame, det_index, vector)."""
        rows = list(rows)
        keys = np.array([(f, i) for f, i, _ in rows], dtype=np.uint32).reshape(-1, 2)
        vals = np.array([v for _, _, v in rows], dtype=np.float64).reshape(-1, width)
        return cls(cue_id, width, keys, vals)


def cue_store_bytes(store: CueStore) -> bytes:
    rec = np.dtype([("frame", "<u4"), ("det", "<u4"), ("v", "<f4", (store.width,))])
    arr = np.empty(len(store), dtype=rec)
    arr["frame"] = store.keys[:, 0]
    arr["det"] = store.keys[:, 1]
    arr["v"] = store.values
    header = _CUE_HEADER.pack(CUE_MAGIC, CUE_VERSION, store.cue_id, store.width, len(store))
    return header + arr.tobytes()


def cue_store_from_bytes(buf: bytes) -> CueStore:
    if len(buf) < len(CUE_MAGIC) or buf[: len(CUE_MAGIC)] != CUE_MAGIC:
        raise BadMagic("not a CAMELCUE file")
    if len(buf) < _CUE_HEADER.size:
        raise Truncated("header cut short")
    _, version, cue_id, width, count = _CUE_HEADER.unpack_from(buf)
    if version != CUE_VERSION:
        raise VersionMismatch(f"cue store version {version}, expected {CUE_VERSION}")
    rec = np.dtype([("frame", "<u4"), ("det", "<u4"), ("v", "<f4", (width,))])
    payload = buf[_CUE_HEADER.size :]
    if len(payload) != count * rec.itemsize:
        raise Truncated(f"expected {count * rec.itemsize} payload bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=rec, count=count)
    keys = np.stack([arr["frame"], arr["det"]], axis=1)
    return CueStore(cue_id, width, keys, arr["v"].astype(np.float64))


def save_cue_store(path, store: CueStore):
    Path(path).write_bytes(cue_store_bytes(store))


def load_cue_store(path) -> CueStore:
    return cue_store_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- weights

_WTS_HEADER = struct.Struct("<8sI32sI")


def weights_bytes(tensors: dict, config_hash: bytes) -> bytes:
    if len(config_hash) != 32:
        raise ValueError("config hash must be 32 raw bytes")
    out = [_WTS_HEADER.pack(WTS_MAGIC, WTS_VERSION, config_hash, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def weights_from_bytes(buf: bytes):
    """Returns ``(config_hash, {name: float64 array})`` preserving file order."""
    if buf[: len(WTS_MAGIC)] != WTS_MAGIC:
        raise BadMagic("not a CAMELWTS file")
    if len(buf) < _WTS_HEADER.size:
        raise Truncated("header cut short")
    _, version, config_hash, count = _WTS_HEADER.unpack_from(buf)
    if version != WTS_VERSION:
        raise VersionMismatch(f"weights version {version}, expected {WTS_VERSION}")
    pos = _WTS_HEADER.size
    tensors = {}

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise Truncated(f"needed {n} bytes at offset {pos}, file has {len(buf)}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        if name in tensors:
            raise ValueError(f"duplicate tensor {name!r} in weights file")
        tensors[name] = data.astype(np.float64)
    if pos != len(buf):
        raise ValueError(f"{len(buf) - pos} trailing bytes after last tensor")
    return config_hash, tensors


def save_weights(path, tensors, config_hash):
    Path(path).write_bytes(weights_bytes(tensors, config_hash))


def load_weights(path):
    return weights_from_bytes(Path(path).read_bytes())
