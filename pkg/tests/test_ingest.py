from collections import Counter

import numpy as np
import pytest

from riskpipe.core import ACCEL_AXES, ALL_CHANNELS, DrivingSegment
from riskpipe.datagen import FleetConfig, GenMode, gen_fleet, gen_misconfigured_truck, write_raw_traces
from riskpipe.errors import DataError
from riskpipe.ingest import (
    Assignment,
    RawTrace,
    axis_correct,
    estimate_axes,
    ingest_raw_dir,
    merge_segments,
    read_assignment,
    resample_1hz,
    split_by_assignment,
)

T0 = 1_520_000_000


def seg(start, n, driver="D", truck="T", fill=None, rng=None):
    if fill is None:
        values = (rng or np.random.default_rng(start)).normal(size=(len(ALL_CHANNELS), n))
    else:
        values = np.full((len(ALL_CHANNELS), n), fill)
    return DrivingSegment(driver, truck, start, values.astype(np.float32))


def trace_from(channels_ts_vals, start=T0, truck="T"):
    return RawTrace(truck, start, {c: channels_ts_vals[c] for c in ALL_CHANNELS})


def test_back_to_back_segments_merge():
    a, b = seg(T0, 100), seg(T0 + 100, 50)
    (m,) = merge_segments([a, b], gap_tolerance_s=1)
    assert m.length == 150
    assert np.array_equal(m.values[:, :100], a.values) and np.array_equal(m.values[:, 100:], b.values)


def test_long_gap_keeps_segments_apart():
    a, b = seg(T0, 100), seg(T0 + 99 + 3601, 50)
    assert len(merge_segments([a, b], gap_tolerance_s=3600)) == 2
    assert len(merge_segments([a, b], gap_tolerance_s=3601)) == 1


def test_different_drivers_never_merge():
    a, b = seg(T0, 10, driver="A"), seg(T0 + 10, 10, driver="B")
    assert len(merge_segments([a, b])) == 2


def test_merge_conserves_duration(rng):
    segs, t = [], T0
    for _ in range(50):
        n = int(rng.integers(5, 60))
        segs.append(seg(t, n, rng=rng))
        t += n + int(rng.choice([0, 0, 1, 500]))
    merged = merge_segments(segs, gap_tolerance_s=1)
    assert sum(s.length for s in merged) == sum(s.length for s in segs)


def test_resample_two_hz_pairs():
    ts2 = np.array([0.0, 0.5, 1.0, 1.5]) + T0
    ts1 = np.array([0.0, 1.0]) + T0
    data = {c: (ts1, np.array([4.0, 4.0])) for c in ALL_CHANNELS}
    data["AccLong"] = (ts2, np.array([1.0, 3.0, 5.0, 7.0]))
    (s,) = resample_1hz(trace_from(data))
    assert s.values[ALL_CHANNELS.index("AccLong")].tolist() == [2.0, 6.0]
    assert s.values[ALL_CHANNELS.index("WheelSpeed")].tolist() == [4.0, 4.0]


def test_resample_preserves_mean(rng):
    n = 300
    ts2 = T0 + np.arange(2 * n) / 2
    data = {c: (ts2, rng.normal(size=2 * n)) for c in ALL_CHANNELS}
    (s,) = resample_1hz(trace_from(data))
    for i, c in enumerate(ALL_CHANNELS):
        assert s.values[i].mean() == pytest.approx(data[c][1].mean(), rel=1e-5, abs=1e-6)


def test_resample_breaks_on_missing_bins():
    ts = T0 + np.array([0.0, 1.0, 5.0, 6.0])
    data = {c: (ts, np.ones(4)) for c in ALL_CHANNELS}
    parts = resample_1hz(trace_from(data))
    assert [(p.start_time - T0, p.length) for p in parts] == [(0, 2), (5, 2)]


def test_resample_requires_all_channels():
    with pytest.raises(DataError):
        resample_1hz(RawTrace("T", T0, {"AccLong": (np.array([T0]), np.array([1.0]))}))


def test_split_by_assignment():
    s = seg(T0, 100)
    rep = Counter()
    parts = split_by_assignment(s, [Assignment("A", "T", T0, T0 + 40), Assignment("B", "T", T0 + 60, T0 + 200)], rep)
    assert [(p.driver_id, p.length) for p in parts] == [("A", 40), ("B", 40)]
    assert rep["unassigned_samples"] == 20


def realistic_segments(seed=2, n_drivers=3):
    fleet = gen_fleet(n_drivers, GenMode("signal", study_days=4), seed=seed,
                      cfg=FleetConfig(trips_per_day=2.0, trip_median_s=1200.0, misconfigured_fraction=0.0))
    return fleet.segments


def test_identity_axes_detected():
    segs = [s for s in realistic_segments() if s.driver_id == realistic_segments()[0].driver_id]
    fixed, corr = axis_correct(segs)
    assert corr.is_identity and not corr.uncorrectable
    assert all(np.array_equal(a.values, b.values) for a, b in zip(fixed, segs))


def test_scrambled_axes_recovered():
    segs = realistic_segments()
    segs = [s for s in segs if s.driver_id == segs[0].driver_id]
    idx = [ALL_CHANNELS.index(a) for a in ACCEL_AXES]
    bad = gen_misconfigured_truck(segs, (2, 0, 1), (-1, 1, -1))
    fixed, corr = axis_correct(bad)
    assert not corr.is_identity
    for a, b in zip(fixed, segs):
        assert np.array_equal(a.values[idx], b.values[idx])


def test_constant_accelerometer_is_uncorrectable():
    corr = estimate_axes([seg(T0, 400, fill=1.0)])
    assert corr.uncorrectable


def test_too_few_samples_rejected(rng):
    with pytest.raises(DataError):
        estimate_axes([seg(T0, 50, rng=rng)])


def test_overlapping_assignments_rejected(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("driver_id,truck_id,start,end\nA,T,0,100\nB,T,50,200\n")
    with pytest.raises(DataError):
        read_assignment(p)


def test_raw_export_roundtrip(tmp_path):
    segs = realistic_segments(seed=4, n_drivers=2)
    write_raw_traces(segs, tmp_path / "raw", seed=0, max_piece_s=400)
    back = ingest_raw_dir(tmp_path / "raw", tmp_path / "raw" / "assignment.csv")
    key = lambda s: (s.driver_id, s.start_time)  # noqa: E731
    back = sorted(back, key=key)
    segs = sorted(segs, key=key)
    assert [(s.driver_id, s.start_time, s.length) for s in back] == [(s.driver_id, s.start_time, s.length) for s in segs]
    for a, b in zip(back, segs):
        np.testing.assert_allclose(a.values, b.values, rtol=1e-5, atol=1e-5)
