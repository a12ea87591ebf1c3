"""Binary event files and dataset manifests.

Wire format (little-endian):
    magic "EVT1"  4 bytes
    width         u16
    height        u16
    t_start       u64
    t_end         u64
    label         i32   (-1 = unlabeled)
    n_events      u64
    records       n_events x {x: u16, y: u16, t: u64, p: i8}   (13 bytes each)

save followed by load is a bit-exact round trip for any valid stream.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import EventStream, require_valid

MAGIC = b"EVT1"
_HEADER = struct.Struct("<4sHHQQiQ")
HEADER_SIZE = _HEADER.size  # 36
RECORD_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])
RECORD_SIZE = RECORD_DTYPE.itemsize  # 13


class EventFileError(ValueError):
    """Malformed event file; ``offset`` points at the offending byte."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


def save_events(stream: EventStream, path: str | Path) -> None:
    require_valid(stream)
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise ValueError("sensor geometry exceeds u16 range")
    label = -1 if stream.label is None else int(stream.label)
    recs = np.empty(stream.n, dtype=RECORD_DTYPE)
    recs["x"] = stream.x
    recs["y"] = stream.y
    recs["t"] = stream.t
    recs["p"] = stream.p
    header = _HEADER.pack(MAGIC, stream.width, stream.height,
                          stream.t_start, stream.t_end, label, stream.n)
    Path(path).write_bytes(header + recs.tobytes())


def load_events(path: str | Path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise EventFileError(f"truncated header: {len(raw)} of {HEADER_SIZE} bytes", len(raw))
    magic, width, height, t_start, t_end, label, n = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise EventFileError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if width == 0 or height == 0:
        raise EventFileError(f"non-positive sensor size {width}x{height}", 4)
    if t_end <= t_start:
        raise EventFileError(f"empty interval [{t_start}, {t_end})", 16)
    body = raw[HEADER_SIZE:]
    want = n * RECORD_SIZE
    if len(body) < want:
        raise EventFileError(
            f"truncated records: header promises {n}, payload holds {len(body) // RECORD_SIZE}",
            HEADER_SIZE + len(body))
    if len(body) > want:
        raise EventFileError(f"{len(body) - want} trailing bytes after {n} records",
                             HEADER_SIZE + want)
    recs = np.frombuffer(body, dtype=RECORD_DTYPE, count=n)

    def record_offset(i: int, field: str) -> int:
        return HEADER_SIZE + i * RECORD_SIZE + RECORD_DTYPE.fields[field][1]

    bad = np.flatnonzero(np.abs(recs["p"].astype(np.int16)) != 1)
    if bad.size:
        i = int(bad[0])
        raise EventFileError(f"invalid polarity {recs['p'][i]} in record {i}",
                             record_offset(i, "p"))
    bad = np.flatnonzero(recs["x"] >= width)
    if bad.size:
        i = int(bad[0])
        raise EventFileError(f"x={recs['x'][i]} outside sensor width {width} in record {i}",
                             record_offset(i, "x"))
    bad = np.flatnonzero(recs["y"] >= height)
    if bad.size:
        i = int(bad[0])
        raise EventFileError(f"y={recs['y'][i]} outside sensor height {height} in record {i}",
                             record_offset(i, "y"))
    t = recs["t"].astype(np.int64)
    bad = np.flatnonzero((t < t_start) | (t >= t_end))
    if bad.size:
        i = int(bad[0])
        raise EventFileError(
            f"t={t[i]} outside [{t_start}, {t_end}) in record {i}", record_offset(i, "t"))
    if t.size > 1:
        bad = np.flatnonzero(np.diff(t) < 0)
        if bad.size:
            i = int(bad[0]) + 1
            raise EventFileError(f"timestamps regress at record {i}", record_offset(i, "t"))
    return EventStream(
        x=recs["x"], y=recs["y"], t=t, p=recs["p"],
        width=width, height=height, t_start=t_start, t_end=t_end,
        label=None if label < 0 else label,
    )


@dataclass(frozen=True)
class ManifestEntry:
    file: str
    label: int
    width: int
    height: int
    duration: int


@dataclass(frozen=True)
class DatasetManifest:
    """Index of a dataset directory: event files, labels, class names."""

    root: Path
    entries: tuple[ManifestEntry, ...]
    class_names: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __post_init__(self):
        geoms = {(e.width, e.height, e.duration) for e in self.entries}
        if len(geoms) > 1:
            raise ValueError(f"inconsistent sample geometry across entries: {sorted(geoms)}")
        for e in self.entries:
            if not 0 <= e.label < self.num_classes:
                raise ValueError(f"label {e.label} of {e.file} outside [0, {self.num_classes})")

    def path(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.file

    def load(self, index: int) -> EventStream:
        return load_events(self.path(self.entries[index]))

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "classes": list(self.class_names),
            "samples": [
                {"file": e.file, "label": e.label, "width": e.width,
                 "height": e.height, "duration": e.duration}
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.write_text(self.to_json())


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("version") != 1:
        raise ValueError(f"unsupported manifest version {doc.get('version')!r} in {path}")
    entries = tuple(
        ManifestEntry(file=s["file"], label=int(s["label"]), width=int(s["width"]),
                      height=int(s["height"]), duration=int(s["duration"]))
        for s in doc["samples"]
    )
    return DatasetManifest(root=path.parent, entries=entries,
                           class_names=tuple(doc["classes"]))
