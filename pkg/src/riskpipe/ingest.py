"""Raw trip files -> merged, axis-corrected 1 Hz driving segments."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ACCEL_AXES, ALL_CHANNELS, DrivingSegment
from .datagen import RAW_COLUMNS
from .errors import DataError

log = logging.getLogger(__name__)

MIN_POOLED_SAMPLES = 300
MIN_AXIS_CORRELATION = 0.2


@dataclass
class RawTrace:
    """One trip file: per-channel (timestamps, values) at native rates."""

    truck_id: str
    start_time: float
    channels: dict[str, tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        for name, (ts, _) in self.channels.items():
            if len(ts) > 1 and np.any(np.diff(ts) < 0):
                raise DataError(f"trace {self.truck_id}@{self.start_time}: timestamps of {name} decrease")


@dataclass(frozen=True)
class Assignment:
    driver_id: str
    truck_id: str
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class AxisCorrection:
    """corrected[j] = signs[j] * observed[perm[j]] over (AccLat, AccLong, AccVert)."""

    perm: tuple[int, int, int] = (0, 1, 2)
    signs: tuple[int, int, int] = (1, 1, 1)
    correlation: float = 0.0
    uncorrectable: bool = False

    @property
    def is_identity(self) -> bool:
        return self.perm == (0, 1, 2) and self.signs == (1, 1, 1)


def inverse_transform(perm, signs) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Correction that undoes ``observed[i] = signs[i] * true[perm[i]]``."""
    inv = [0, 0, 0]
    inv_signs = [1, 1, 1]
    for i, p in enumerate(perm):
        inv[p] = i
        inv_signs[p] = signs[i]
    return tuple(inv), tuple(inv_signs)


# --------------------------------------------------------------------------
# resampling
# --------------------------------------------------------------------------


def resample_1hz(trace: RawTrace, channels: tuple[str, ...] = ALL_CHANNELS) -> list[DrivingSegment]:
    """Average every channel over 1 s bins anchored at the trace start.

    Bins where some channel has no sample at all break the trace; each
    unbroken run becomes its own segment (truck-tagged, driver unknown).
    """
    start = int(np.floor(trace.start_time))
    missing = [c for c in channels if c not in trace.channels]
    if missing:
        raise DataError(f"trace {trace.truck_id}@{start}: missing channels {missing}")
    last = max((ts[-1] for ts, _ in trace.channels.values() if len(ts)), default=None)
    if last is None:
        return []
    n_bins = int(np.floor(last - start)) + 1
    values = np.empty((len(channels), n_bins))
    filled = np.ones(n_bins, dtype=bool)
    for i, name in enumerate(channels):
        ts, vs = trace.channels[name]
        ts = np.asarray(ts, dtype=np.float64)
        vs = np.asarray(vs, dtype=np.float64)
        ok = np.isfinite(vs)
        bins = np.floor(ts[ok] - start).astype(np.int64)
        sums = np.bincount(bins, weights=vs[ok], minlength=n_bins)[:n_bins]
        counts = np.bincount(bins, minlength=n_bins)[:n_bins]
        filled &= counts > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            values[i] = sums / counts
    out = []
    idx = np.flatnonzero(filled)
    if len(idx) == 0:
        return out
    breaks = np.flatnonzero(np.diff(idx) > 1) + 1
    for run in np.split(idx, breaks):
        out.append(
            DrivingSegment(
                driver_id="unassigned",
                truck_id=trace.truck_id,
                start_time=start + int(run[0]),
                values=values[:, run[0] : run[-1] + 1].astype(np.float32),
                channels=channels,
                sample_period=1.0,
            )
        )
    return out


# --------------------------------------------------------------------------
# merging
# --------------------------------------------------------------------------


def split_by_assignment(
    seg: DrivingSegment, assignments: list[Assignment], report: Counter | None = None
) -> list[DrivingSegment]:
    """Cut a truck segment at driver-assignment boundaries; drop unassigned time."""
    report = report if report is not None else Counter()
    pieces = []
    covered = 0
    for a in assignments:
        if a.truck_id != seg.truck_id:
            continue
        lo = max(seg.start_time, a.start)
        hi = min(seg.end_time, a.end)
        if hi <= lo:
            continue
        i0, i1 = lo - seg.start_time, hi - seg.start_time
        pieces.append(seg.with_values(seg.values[:, i0:i1], driver_id=a.driver_id, start_time=lo))
        covered += i1 - i0
    dropped = seg.length - covered
    if dropped > 0:
        report["unassigned_samples"] += dropped
        if covered == 0:
            report["unassigned_traces"] += 1
    if len(pieces) > 1:
        report["split_traces"] += 1
    return pieces


def merge_segments(segments: list[DrivingSegment], gap_tolerance_s: float = 2.0) -> list[DrivingSegment]:
    """Join same-driver, same-truck segments separated by at most ``gap_tolerance_s``.

    The gap is the time from the last sample of one segment to the first of
    the next, so back-to-back 1 Hz segments have a gap of 1 s. Missing
    samples inside an accepted gap are linearly interpolated.
    """
    ordered = sorted(segments, key=lambda s: (s.driver_id, s.truck_id, s.start_time))
    out: list[DrivingSegment] = []
    cur_parts: list[np.ndarray] = []
    cur: DrivingSegment | None = None
    cur_end = 0

    def flush():
        if cur is not None:
            out.append(cur.with_values(np.concatenate(cur_parts, axis=1)))

    for seg in ordered:
        if seg.length == 0:
            continue
        if (
            cur is not None
            and seg.driver_id == cur.driver_id
            and seg.truck_id == cur.truck_id
            and seg.channels == cur.channels
            and seg.start_time - (cur_end - 1) <= gap_tolerance_s
        ):
            values = seg.values
            overlap = cur_end - seg.start_time
            if overlap > 0:
                values = values[:, overlap:]
            elif overlap < 0:
                n_fill = -overlap
                left = cur_parts[-1][:, -1:].astype(np.float64)
                right = values[:, :1].astype(np.float64)
                frac = np.arange(1, n_fill + 1) / (n_fill + 1)
                cur_parts.append((left + (right - left) * frac).astype(values.dtype))
            if values.shape[1]:
                cur_parts.append(values)
            cur_end = max(cur_end, seg.end_time)
            continue
        flush()
        cur, cur_parts, cur_end = seg, [seg.values], seg.end_time
    flush()
    return out


def merge_contiguous(
    traces: list[RawTrace],
    assignment: list[Assignment],
    gap_tolerance_s: float = 2.0,
    report: Counter | None = None,
) -> list[DrivingSegment]:
    """Resample each trace, attribute it to its driver(s), and merge contiguous periods."""
    report = report if report is not None else Counter()
    by_truck = defaultdict(list)
    for a in assignment:
        by_truck[a.truck_id].append(a)
    pieces = []
    for trace in sorted(traces, key=lambda t: (t.truck_id, t.start_time)):
        for seg in resample_1hz(trace):
            pieces.extend(split_by_assignment(seg, by_truck.get(trace.truck_id, []), report))
    merged = merge_segments(pieces, gap_tolerance_s)
    report["segments"] += len(merged)
    return merged


# --------------------------------------------------------------------------
# accelerometer axis correction
# --------------------------------------------------------------------------


def estimate_axes(segments: list[DrivingSegment]) -> AxisCorrection:
    """Work out which observed axis is which from pooled samples.

    Longitudinal: strongest |correlation| with the wheel-based acceleration,
    signed to correlate positively. Vertical: the remaining axis with the
    largest |mean| (gravity), signed positive. Lateral: the last axis,
    signed so its mean is positive (road cross-slope in right-hand traffic
    leaves a small rightward bias while driving).
    """
    if not segments:
        return AxisCorrection(uncorrectable=True)
    idx = [segments[0].channels.index(a) for a in ACCEL_AXES]
    wb = segments[0].channels.index("AccLongWBVS")
    acc = np.concatenate([s.values[idx].astype(np.float64) for s in segments], axis=1)
    ref = np.concatenate([s.values[wb].astype(np.float64) for s in segments])
    if acc.shape[1] < MIN_POOLED_SAMPLES:
        raise DataError(f"need >= {MIN_POOLED_SAMPLES} pooled samples, got {acc.shape[1]}")

    corr = np.zeros(3)
    ref_c = ref - ref.mean()
    ref_n = np.sqrt(np.sum(ref_c * ref_c))
    for i in range(3):
        a = acc[i] - acc[i].mean()
        den = np.sqrt(np.sum(a * a)) * ref_n
        corr[i] = float(np.sum(a * ref_c) / den) if den > 0 else 0.0
    longi = int(np.argmax(np.abs(corr)))
    if abs(corr[longi]) < MIN_AXIS_CORRELATION:
        return AxisCorrection(correlation=float(corr[longi]), uncorrectable=True)
    rest = [i for i in range(3) if i != longi]
    means = np.abs(acc[rest].mean(axis=1))
    vert = rest[int(np.argmax(means))]
    lat = rest[1 - int(np.argmax(means))]
    perm = (lat, longi, vert)
    signs = (
        1 if acc[lat].mean() >= 0 else -1,
        1 if corr[longi] > 0 else -1,
        1 if acc[vert].mean() >= 0 else -1,
    )
    return AxisCorrection(perm, signs, float(corr[longi]))


def apply_axes(segments: list[DrivingSegment], corr: AxisCorrection) -> list[DrivingSegment]:
    if corr.uncorrectable or corr.is_identity:
        return list(segments)
    out = []
    for seg in segments:
        idx = [seg.channels.index(a) for a in ACCEL_AXES]
        values = seg.values.copy()
        src = seg.values[idx]
        for j, row in enumerate(idx):
            values[row] = corr.signs[j] * src[corr.perm[j]]
        out.append(seg.with_values(values))
    return out


def axis_correct(segments: list[DrivingSegment]) -> tuple[list[DrivingSegment], AxisCorrection]:
    """Estimate and apply the axis fix for one truck-month of segments."""
    corr = estimate_axes(segments)
    if corr.uncorrectable:
        log.warning("truck-month uncorrectable (best |corr| %.3f)", abs(corr.correlation))
    return apply_axes(segments, corr), corr


def truck_month(seg: DrivingSegment) -> tuple[str, str]:
    d = dt.datetime.fromtimestamp(seg.start_time, tz=dt.timezone.utc)
    return seg.truck_id, f"{d.year:04d}-{d.month:02d}"


def correct_fleet(
    segments: list[DrivingSegment], report: Counter | None = None
) -> tuple[list[DrivingSegment], dict[tuple[str, str], AxisCorrection]]:
    """Axis-correct every truck-month independently; output order is canonical."""
    report = report if report is not None else Counter()
    groups = defaultdict(list)
    for seg in segments:
        groups[truck_month(seg)].append(seg)
    out, transforms = [], {}
    for key in sorted(groups):
        segs = sorted(groups[key], key=lambda s: (s.start_time, s.driver_id))
        if sum(s.length for s in segs) < MIN_POOLED_SAMPLES:
            report["too_short_truck_months"] += 1
            out.extend(segs)
            continue
        fixed, corr = axis_correct(segs)
        transforms[key] = corr
        report["uncorrectable" if corr.uncorrectable else ("identity" if corr.is_identity else "corrected")] += 1
        out.extend(fixed)
    out.sort(key=lambda s: (s.driver_id, s.start_time, s.truck_id))
    return out, transforms


# --------------------------------------------------------------------------
# text input
# --------------------------------------------------------------------------


def read_trace(path: str | Path, truck_id: str | None = None) -> RawTrace:
    """Parse one trip file: first column epoch seconds, others named channels.

    Unknown columns are dropped; empty cells mean "not sampled at this instant".
    """
    path = Path(path)
    truck_id = truck_id or path.parent.name
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no samples")
    keep = [(j, RAW_COLUMNS[h]) for j, h in enumerate(header) if j > 0 and h in RAW_COLUMNS]
    ts_all = np.array([float(r[0]) for r in rows])
    channels = {}
    for j, name in keep:
        cells = [r[j] if j < len(r) else "" for r in rows]
        mask = np.array([c != "" for c in cells])
        vals = np.array([float(c) for c in cells if c != ""])
        channels[name] = (ts_all[mask], vals)
    return RawTrace(truck_id, float(ts_all[0]), channels)


def read_assignment(path: str | Path) -> list[Assignment]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(Assignment(row["driver_id"], row["truck_id"], int(float(row["start"])), int(float(row["end"]))))
    by_truck = defaultdict(list)
    for a in out:
        by_truck[a.truck_id].append(a)
    for truck, items in by_truck.items():
        items.sort(key=lambda a: a.start)
        for x, y in zip(items, items[1:]):
            if y.start < x.end:
                raise DataError(f"overlapping assignments on truck {truck}")
    return out


def ingest_raw_dir(
    raw_dir: str | Path, assignment_path: str | Path, gap_tolerance_s: float = 2.0, report: Counter | None = None
) -> list[DrivingSegment]:
    raw = Path(raw_dir)
    root = raw / "traces" if (raw / "traces").is_dir() else raw
    traces = [read_trace(p) for p in sorted(root.glob("*/*.csv"))]
    segments = merge_contiguous(traces, read_assignment(assignment_path), gap_tolerance_s, report)
    fixed, _ = correct_fleet(segments, report)
    return fixed
