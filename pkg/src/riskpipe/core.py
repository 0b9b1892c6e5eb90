"""Domain types shared by every stage, plus the columnar on-disk store.

Store layout::

    <root>/manifest.json
    <root>/segments/<driver>/<start_time>.col
    <root>/examples/<driver>/<t_end>.col

Each ``.col`` file is a sequence of named column chunks behind a fixed
header and closed by a CRC32 trailer; the manifest carries a sha256 per
file so corruption is caught on read.
"""

from __future__ import annotations

import datetime as dt
import enum
import hashlib
import json
import re
import shutil
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, StoreError

SECONDS_PER_DAY = 86400


class ChannelId(str, enum.Enum):
    AccLat = "AccLat"
    AccLong = "AccLong"
    AccVert = "AccVert"
    AccelPedalPos = "AccelPedalPos"
    EngineTorque = "EngineTorque"
    RetarderTorque = "RetarderTorque"
    # ingest-only
    AccLongWBVS = "AccLongWBVS"
    WheelSpeed = "WheelSpeed"


MODEL_CHANNELS: tuple[str, ...] = (
    "AccLat",
    "AccLong",
    "AccVert",
    "AccelPedalPos",
    "EngineTorque",
    "RetarderTorque",
)
AUX_CHANNELS: tuple[str, ...] = ("AccLongWBVS", "WheelSpeed")
ALL_CHANNELS: tuple[str, ...] = MODEL_CHANNELS + AUX_CHANNELS
ACCEL_AXES: tuple[str, ...] = ("AccLat", "AccLong", "AccVert")

# Accident taxonomy: type id -> share of all recorded accidents (percent).
ACCIDENT_TYPE_SHARES: dict[int, float] = {
    1: 26.0, 2: 17.6, 3: 6.6, 4: 11.0, 5: 2.2, 6: 4.7, 7: 1.5, 8: 4.9,
    9: 2.3, 10: 3.5, 11: 1.0, 12: 0.2, 13: 3.0, 14: 2.0, 15: 1.9, 16: 0.9,
    17: 2.1, 18: 0.7, 19: 1.7, 20: 1.2, 21: 0.3, 22: 0.5, 23: 0.7, 24: 1.8,
    25: 0.6, 26: 0.1, 27: 0.3, 28: 0.1, 29: 0.7, 30: 0.1,
}
ACCIDENT_TYPE_NAMES: dict[int, str] = {
    1: "Accident while driving backwards",
    2: "Hit a stationary object (except wall)",
    3: "Accident while changing dock",
    4: "Hit a stationary vehicle",
    5: "Hit an animal",
    6: "Rear collision",
    7: "Damaged equipment during loading",
    8: "Miscellaneous",
    9: "Hit a cable",
    10: "Rubbing",
    11: "Turning right at intersection, third party overtaking on the right",
    12: "Going straight through the intersection",
    13: "Loss of control",
    14: "Accident or fined because the truck cut off",
    15: "Trailer not properly coupled with truck",
    16: "Truck stuck, towing necessary",
    17: "Hit a wall or building",
    18: "Mechanical breakdown",
    19: "Fined because of leaking truck",
    20: "Improper maneuvering in tight turns",
    21: "Fined because of improper snow clearance",
    22: "Accident caused by vehicle wheel ignition",
    23: "Hit a bridge",
    24: "Equipment damaged during unloading",
    25: "Cargo",
    26: "Vehicle wheel loss",
    27: "Turning left at intersection, third party overtaking on the left",
    28: "Truck cargo theft",
    29: "Truck cargo fell out of the truck",
    30: "Equipment damaged without reported accident",
}
PREDICTABLE_TYPES: frozenset[int] = frozenset({1, 2, 7, 8, 9, 11, 15, 16, 17, 22, 23})

_ID_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


def check_id(value: str, what: str = "id") -> str:
    if not isinstance(value, str) or not _ID_RE.match(value):
        raise ValueError(f"invalid {what} {value!r}: use letters, digits, '_', '.', '-'")
    return value


def day_index(t: int | float) -> int:
    """UTC day number (days since the epoch) containing second ``t``."""
    return int(t // SECONDS_PER_DAY)


def date_to_day(d: dt.date) -> int:
    return (d - dt.date(1970, 1, 1)).days


def day_to_date(day: int) -> dt.date:
    return dt.date(1970, 1, 1) + dt.timedelta(days=int(day))


@dataclass(frozen=True, eq=False)
class DrivingSegment:
    """Contiguous stretch of driving by one driver on one truck.

    ``values`` has one row per entry of ``channels``; all rows share the
    same length and there is no internal time gap.
    """

    driver_id: str
    truck_id: str
    start_time: int
    values: np.ndarray
    channels: tuple[str, ...] = ALL_CHANNELS
    sample_period: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] != len(self.channels):
            raise ValueError(
                f"values must be [{len(self.channels)} channels x length], got {values.shape}"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channels", tuple(str(c) for c in self.channels))
        object.__setattr__(self, "start_time", int(self.start_time))

    @property
    def length(self) -> int:
        return int(self.values.shape[1])

    @property
    def duration(self) -> float:
        return self.length * self.sample_period

    @property
    def end_time(self) -> int:
        """Exclusive end: time just after the last sample."""
        return int(self.start_time + round(self.duration))

    def channel(self, name: str) -> np.ndarray:
        return self.values[self.channels.index(name)]

    def with_values(self, values: np.ndarray, **changes) -> "DrivingSegment":
        kwargs = dict(
            driver_id=self.driver_id,
            truck_id=self.truck_id,
            start_time=self.start_time,
            channels=self.channels,
            sample_period=self.sample_period,
        )
        kwargs.update(changes)
        return DrivingSegment(values=values, **kwargs)

    def __eq__(self, other):
        if not isinstance(other, DrivingSegment):
            return NotImplemented
        return (
            self.driver_id == other.driver_id
            and self.truck_id == other.truck_id
            and self.start_time == other.start_time
            and self.channels == other.channels
            and self.sample_period == other.sample_period
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class AccidentRecord:
    driver_id: str
    date: dt.date
    accident_type: int

    def __post_init__(self):
        if not 1 <= int(self.accident_type) <= 30:
            raise ValueError(f"accident_type must be in 1..30, got {self.accident_type}")

    @property
    def day(self) -> int:
        return date_to_day(self.date)


@dataclass(frozen=True, eq=False)
class Window:
    driver_id: str
    start_time: int
    data: np.ndarray  # [6, L]

    @property
    def end_time(self) -> int:
        return self.start_time + int(self.data.shape[-1])


@dataclass(frozen=True, eq=False)
class Example:
    """Unit of learning: N chronologically ordered windows of one driver."""

    driver_id: str
    t_end: int
    data: np.ndarray  # [N, 6, L]
    label: int | None = None
    window_starts: tuple[int, ...] = ()

    @property
    def example_id(self) -> str:
        return f"{self.driver_id}_{self.t_end}"

    @property
    def t_start(self) -> int:
        return self.window_starts[0] if self.window_starts else self.t_end - self.data.shape[0] * self.data.shape[2]

    def with_label(self, label: int | None) -> "Example":
        return Example(self.driver_id, self.t_end, self.data, label, self.window_starts)

    def __eq__(self, other):
        if not isinstance(other, Example):
            return NotImplemented
        return (
            self.driver_id == other.driver_id
            and self.t_end == other.t_end
            and self.label == other.label
            and tuple(self.window_starts) == tuple(other.window_starts)
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


@dataclass
class StudyConfig:
    window_length_s: int = 3600
    windows_per_example: int = 60
    horizon_days: int = 365
    predictable_types: frozenset[int] = PREDICTABLE_TYPES
    test_fraction: float = 0.30
    folds: int = 5
    gap_tolerance_s: float = 2.0
    post_accident_policy: str = "exclude"
    rng_seed: int = 0

    def __post_init__(self):
        self.predictable_types = frozenset(int(t) for t in self.predictable_types)
        bad = [t for t in self.predictable_types if not 1 <= t <= 30]
        if bad:
            raise ConfigError(f"unknown accident types {sorted(bad)}")
        if self.post_accident_policy not in ("exclude", "negative"):
            raise ConfigError(f"post_accident_policy must be exclude|negative, got {self.post_accident_policy!r}")
        if not 7 <= self.horizon_days <= 365:
            raise ConfigError(f"horizon_days must be within 7..365, got {self.horizon_days}")
        if self.window_length_s < 1 or self.windows_per_example < 1:
            raise ConfigError("window_length_s and windows_per_example must be positive")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")


# --------------------------------------------------------------------------
# columnar container
# --------------------------------------------------------------------------

MAGIC = b"RPCOL"
FORMAT_VERSION = 1
SCHEMA_VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("<i4"), 5: np.dtype("u1"), 6: np.dtype("<i2")}
_DTYPE_CODES = {v.str: k for k, v in _DTYPES.items()}


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_container(columns: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<B", FORMAT_VERSION)]
    meta_bytes = _canonical_json(meta or {})
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.append(struct.pack("<H", len(columns)))
    for name, arr in columns.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.bool_:
            arr = arr.astype("u1")
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        code = _DTYPE_CODES.get(np.dtype(dtype).str)
        if code is None:
            raise StoreError(f"unsupported dtype {arr.dtype} for column {name!r}")
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype(_DTYPES[code], copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_container(blob: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 10 or blob[:5] != MAGIC:
        raise StoreError(f"{source}: not a column container")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise StoreError(f"{source}: checksum mismatch")
    version = body[5]
    if version != FORMAT_VERSION:
        raise StoreError(f"{source}: unknown format version {version}")
    pos = 6
    (meta_len,) = struct.unpack_from("<I", body, pos)
    pos += 4
    meta = json.loads(body[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n_cols,) = struct.unpack_from("<H", body, pos)
    pos += 2
    columns: dict[str, np.ndarray] = {}
    for _ in range(n_cols):
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", body, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        dtype = _DTYPES.get(code)
        if dtype is None:
            raise StoreError(f"{source}: unknown dtype code {code}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        columns[name] = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    return columns, meta


def write_container(path: str | Path, columns: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Write one container file; returns its sha256 hex digest."""
    blob = encode_container(columns, meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_container(path: str | Path, sha256: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise StoreError(f"cannot read {path}: {exc}") from exc
    if sha256 is not None and hashlib.sha256(blob).hexdigest() != sha256:
        raise StoreError(f"{path}: sha256 does not match manifest")
    return decode_container(blob, str(path))


# --------------------------------------------------------------------------
# dataset store
# --------------------------------------------------------------------------


def _segment_record(seg: DrivingSegment) -> tuple[str, dict[str, np.ndarray], dict, dict]:
    check_id(seg.driver_id, "driver_id")
    check_id(seg.truck_id, "truck_id")
    rel = f"segments/{seg.driver_id}/{seg.start_time}.col"
    values = np.asarray(seg.values, dtype=np.float32)
    columns = {ch: values[i] for i, ch in enumerate(seg.channels)}
    meta = {
        "kind": "segment",
        "driver_id": seg.driver_id,
        "truck_id": seg.truck_id,
        "start_time": seg.start_time,
        "sample_period": seg.sample_period,
        "channels": list(seg.channels),
    }
    entry = {
        "driver_id": seg.driver_id,
        "truck_id": seg.truck_id,
        "start_time": seg.start_time,
        "end_time": seg.end_time,
        "length": seg.length,
        "file": rel,
    }
    return rel, columns, meta, entry


def _example_record(ex: Example) -> tuple[str, dict[str, np.ndarray], dict, dict]:
    check_id(ex.driver_id, "driver_id")
    rel = f"examples/{ex.driver_id}/{ex.t_end}.col"
    data = np.asarray(ex.data, dtype=np.float32)
    columns = {ch: np.ascontiguousarray(data[:, i, :]) for i, ch in enumerate(MODEL_CHANNELS)}
    columns["window_starts"] = np.asarray(ex.window_starts, dtype=np.int64)
    meta = {"kind": "example", "driver_id": ex.driver_id, "t_end": ex.t_end, "label": ex.label}
    entry = {
        "driver_id": ex.driver_id,
        "start_time": int(ex.t_start),
        "end_time": ex.t_end,
        "label": ex.label,
        "file": rel,
    }
    return rel, columns, meta, entry


def _sort_key(rec) -> tuple:
    if isinstance(rec, DrivingSegment):
        return (rec.driver_id, rec.start_time, rec.truck_id)
    return (rec.driver_id, rec.t_end)


def store_write(
    records: Iterable[DrivingSegment | Example],
    path: str | Path,
    meta: dict | None = None,
    force: bool = False,
) -> dict:
    """Write segments or examples under ``path`` and return the manifest.

    An existing dataset at ``path`` is replaced only if its files still match
    its manifest (or ``force`` is set); anything else there is left alone.
    """
    root = Path(path)
    records = sorted(records, key=_sort_key)
    kinds = {type(r) for r in records}
    if len(kinds) > 1:
        raise StoreError("cannot mix segments and examples in one dataset")
    kind = "examples" if kinds == {Example} else "segments"

    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        if not force:
            verify_store(root)
        for sub in ("segments", "examples"):
            if (root / sub).exists():
                shutil.rmtree(root / sub)
    root.mkdir(parents=True, exist_ok=True)

    entries = []
    seen = set()
    for rec in records:
        rel, columns, file_meta, entry = (
            _segment_record(rec) if isinstance(rec, DrivingSegment) else _example_record(rec)
        )
        if rel in seen:
            raise StoreError(f"duplicate record {rel}")
        seen.add(rel)
        entry["sha256"] = write_container(root / rel, columns, file_meta)
        entries.append(entry)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "count": len(entries),
        "drivers": sorted({e["driver_id"] for e in entries}),
        "entries": entries,
        "meta": meta or {},
    }
    manifest_path.write_bytes(_canonical_json(manifest) + b"\n")
    return manifest


def load_manifest(path: str | Path) -> dict:
    manifest_path = Path(path) / "manifest.json"
    if not manifest_path.exists():
        raise StoreError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text("utf-8"))
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise StoreError(f"unknown schema version {manifest.get('schema_version')!r}")
    return manifest


def verify_store(path: str | Path) -> None:
    root = Path(path)
    manifest = load_manifest(root)
    for entry in manifest["entries"]:
        blob = (root / entry["file"]).read_bytes() if (root / entry["file"]).exists() else None
        if blob is None or hashlib.sha256(blob).hexdigest() != entry["sha256"]:
            raise StoreError(f"{root / entry['file']}: missing or does not match manifest")


def _decode_record(columns: dict[str, np.ndarray], meta: dict) -> DrivingSegment | Example:
    if meta["kind"] == "segment":
        chans = tuple(meta["channels"])
        values = np.stack([columns[c] for c in chans]) if chans else np.zeros((0, 0), np.float32)
        return DrivingSegment(
            driver_id=meta["driver_id"],
            truck_id=meta["truck_id"],
            start_time=meta["start_time"],
            values=values,
            channels=chans,
            sample_period=meta["sample_period"],
        )
    data = np.stack([columns[c] for c in MODEL_CHANNELS], axis=1)
    return Example(
        driver_id=meta["driver_id"],
        t_end=meta["t_end"],
        data=data,
        label=meta["label"],
        window_starts=tuple(int(t) for t in columns["window_starts"]),
    )


def store_read(
    path: str | Path,
    drivers: Sequence[str] | None = None,
    start: int | None = None,
    end: int | None = None,
    predicate: Callable[[dict], bool] | None = None,
) -> list:
    """Read records matching the filter, ordered by (driver, time).

    ``start``/``end`` select records overlapping the half-open interval
    ``[start, end)``. ``predicate`` receives the manifest entry.
    """
    root = Path(path)
    manifest = load_manifest(root)
    wanted = set(drivers) if drivers is not None else None
    out = []
    for entry in manifest["entries"]:
        if wanted is not None and entry["driver_id"] not in wanted:
            continue
        if start is not None and entry["end_time"] <= start:
            continue
        if end is not None and entry["start_time"] >= end:
            continue
        if predicate is not None and not predicate(entry):
            continue
        columns, meta = read_container(root / entry["file"], entry["sha256"])
        out.append(_decode_record(columns, meta))
    out.sort(key=_sort_key)
    return out


def tree_checksum(path: str | Path) -> str:
    """sha256 over every file below ``path`` (relative names + contents)."""
    root = Path(path)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode("utf-8") + b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def file_checksum(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

