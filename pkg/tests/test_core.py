import datetime as dt
import json

import numpy as np
import pytest

from riskpipe.core import (
    ALL_CHANNELS,
    MODEL_CHANNELS,
    AccidentRecord,
    DrivingSegment,
    Example,
    StudyConfig,
    decode_container,
    encode_container,
    load_manifest,
    store_read,
    store_write,
)
from riskpipe.errors import ConfigError, StoreError


def make_segment(rng, driver="D1", start=1_500_000_000, n=50, truck="T1"):
    values = rng.normal(size=(len(ALL_CHANNELS), n)).astype(np.float32)
    return DrivingSegment(driver, truck, start, values)


def test_six_model_channels():
    assert len(MODEL_CHANNELS) == 6
    assert not set(MODEL_CHANNELS) & {"AccLongWBVS", "WheelSpeed"}


def test_single_segment_roundtrip_is_bit_exact(tmp_path, rng):
    seg = make_segment(rng)
    store_write([seg], tmp_path / "ds")
    (back,) = store_read(tmp_path / "ds")
    assert back == seg
    assert back.values.tobytes() == seg.values.tobytes()


def test_empty_dataset_manifest(tmp_path):
    m = store_write([], tmp_path / "ds")
    assert m["count"] == 0 and m["entries"] == []
    assert load_manifest(tmp_path / "ds")["count"] == 0
    assert store_read(tmp_path / "ds") == []


def test_hundred_random_segments_roundtrip(tmp_path, rng):
    segs = [
        make_segment(rng, driver=f"D{i % 7}", start=1_500_000_000 + 1000 * i, n=int(rng.integers(1, 80)))
        for i in range(100)
    ]
    store_write(segs, tmp_path / "ds")
    back = store_read(tmp_path / "ds")
    key = lambda s: (s.driver_id, s.start_time)  # noqa: E731
    assert sorted(segs, key=key) == back


def test_filters(tmp_path, rng):
    segs = [make_segment(rng, driver=d, start=s) for d, s in [("A", 100), ("A", 500), ("B", 300)]]
    store_write(segs, tmp_path / "ds")
    only_a = store_read(tmp_path / "ds", drivers=["A"])
    assert {s.driver_id for s in only_a} == {"A"} and len(only_a) == 2
    assert store_read(tmp_path / "ds", start=10_000, end=20_000) == []
    # [start, end) overlap: a segment at 100..150 overlaps [120, 130)
    assert len(store_read(tmp_path / "ds", start=120, end=130)) == 1
    everything = store_read(tmp_path / "ds", predicate=lambda e: True)
    assert len(everything) == load_manifest(tmp_path / "ds")["count"]


def test_examples_roundtrip(tmp_path, rng):
    data = rng.normal(size=(3, 6, 10)).astype(np.float32)
    ex = Example("D9", 1_600_000_030, data, 1, (1_600_000_000, 1_600_000_010, 1_600_000_020))
    store_write([ex], tmp_path / "ex")
    (back,) = store_read(tmp_path / "ex")
    assert back == ex


def test_mixed_kinds_rejected(tmp_path, rng):
    ex = Example("D9", 10, np.zeros((1, 6, 10), np.float32), 0, (0,))
    with pytest.raises(StoreError):
        store_write([make_segment(rng), ex], tmp_path / "ds")


def test_corruption_detected(tmp_path, rng):
    store_write([make_segment(rng)], tmp_path / "ds")
    entry = load_manifest(tmp_path / "ds")["entries"][0]
    path = tmp_path / "ds" / entry["file"]
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(StoreError):
        store_read(tmp_path / "ds")


def test_store_write_refuses_to_clobber_tampered_dataset(tmp_path, rng):
    store_write([make_segment(rng)], tmp_path / "ds")
    manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    (tmp_path / "ds" / manifest["entries"][0]["file"]).write_bytes(b"junk")
    with pytest.raises(StoreError):
        store_write([make_segment(rng)], tmp_path / "ds")
    store_write([make_segment(rng)], tmp_path / "ds", force=True)


def test_container_dtypes_and_crc():
    cols = {
        "f4": np.arange(3, dtype=np.float32),
        "f8": np.linspace(0, 1, 4),
        "i8": np.array([[1, 2], [3, 4]], dtype=np.int64),
        "b": np.array([True, False]),
    }
    blob = encode_container(cols, {"k": 1})
    back, meta = decode_container(blob)
    assert meta == {"k": 1}
    for k in ("f4", "f8", "i8"):
        assert np.array_equal(back[k], cols[k]) and back[k].dtype == cols[k].dtype
    assert back["b"].tolist() == [1, 0]
    with pytest.raises(StoreError):
        decode_container(blob[:-1] + bytes([blob[-1] ^ 1]))


def test_segment_shape_checked():
    with pytest.raises(ValueError):
        DrivingSegment("D", "T", 0, np.zeros((3, 5)))


@pytest.mark.parametrize("t", [0, 31])
def test_accident_type_range(t):
    with pytest.raises(ValueError):
        AccidentRecord("D", dt.date(2018, 1, 1), t)


def test_study_config_validation():
    StudyConfig()
    with pytest.raises(ConfigError):
        StudyConfig(predictable_types={1, 99})
    with pytest.raises(ConfigError):
        StudyConfig(post_accident_policy="drop")
    with pytest.raises(ConfigError):
        StudyConfig(folds=1)
