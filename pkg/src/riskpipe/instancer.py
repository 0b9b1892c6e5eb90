"""Windows of continuous driving -> multi-window examples -> labels."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from typing import Iterable

import numpy as np

from .core import (
    MODEL_CHANNELS,
    AccidentRecord,
    DrivingSegment,
    Example,
    StudyConfig,
    Window,
    day_index,
)

log = logging.getLogger(__name__)


def extract_windows(seg: DrivingSegment, window_length_s: int, report: Counter | None = None) -> list[Window]:
    """Back-to-back windows from the segment start; the tail remainder is dropped."""
    if seg.sample_period != 1.0:
        raise ValueError("extract_windows needs a 1 Hz segment")
    n = seg.length // window_length_s
    if n == 0:
        if report is not None:
            report["short_segments"] += 1
        return []
    rows = [seg.channels.index(c) for c in MODEL_CHANNELS]
    data = seg.values[rows].astype(np.float32, copy=False)
    return [
        Window(seg.driver_id, seg.start_time + k * window_length_s, data[:, k * window_length_s : (k + 1) * window_length_s])
        for k in range(n)
    ]


def assemble_examples(windows: Iterable[Window], n_windows: int) -> list[Example]:
    """Group consecutive windows of one driver into examples of ``n_windows``."""
    windows = sorted(windows, key=lambda w: w.start_time)
    if not windows:
        return []
    drivers = {w.driver_id for w in windows}
    if len(drivers) != 1:
        raise ValueError(f"assemble_examples expects a single driver, got {sorted(drivers)}")
    out = []
    for k in range(len(windows) // n_windows):
        group = windows[k * n_windows : (k + 1) * n_windows]
        out.append(
            Example(
                driver_id=group[0].driver_id,
                t_end=group[-1].end_time,
                data=np.stack([w.data for w in group]),
                label=None,
                window_starts=tuple(w.start_time for w in group),
            )
        )
    return out


def label_examples(
    examples: Iterable[Example],
    accidents: Iterable[AccidentRecord],
    config: StudyConfig,
    report: Counter | None = None,
) -> list[Example]:
    """Positive iff a predictable accident by the driver falls in (end day, end day + horizon].

    Comparison is by UTC day. An example whose driver already had a
    predictable accident on or before its end day is dropped
    (``post_accident_policy="exclude"``) or forced negative.
    """
    report = report if report is not None else Counter()
    examples = list(examples)
    known = {e.driver_id for e in examples}
    days = defaultdict(list)
    for a in accidents:
        if a.driver_id not in known:
            report["accidents_unknown_driver"] += 1
            continue
        if a.accident_type in config.predictable_types:
            days[a.driver_id].append(a.day)
    days = {d: np.sort(np.asarray(v)) for d, v in days.items()}

    out = []
    for ex in examples:
        end_day = day_index(ex.t_end - 1)  # t_end is exclusive
        acc = days.get(ex.driver_id)
        prior = acc is not None and bool(np.any(acc <= end_day))
        if prior:
            if config.post_accident_policy == "exclude":
                report["excluded_post_accident"] += 1
                continue
            out.append(ex.with_label(0))
            continue
        positive = acc is not None and bool(np.any((acc > end_day) & (acc <= end_day + config.horizon_days)))
        out.append(ex.with_label(int(positive)))
    report["positive"] += sum(e.label for e in out)
    report["negative"] += sum(1 - e.label for e in out)
    return out


def build_examples(
    segments: Iterable[DrivingSegment],
    accidents: Iterable[AccidentRecord],
    config: StudyConfig,
    report: Counter | None = None,
) -> list[Example]:
    """Whole instance-creation stage, driver by driver."""
    report = report if report is not None else Counter()
    by_driver = defaultdict(list)
    for seg in segments:
        by_driver[seg.driver_id].extend(extract_windows(seg, config.window_length_s, report))
    unlabeled = []
    for driver in sorted(by_driver):
        unlabeled.extend(assemble_examples(by_driver[driver], config.windows_per_example))
    labeled = label_examples(unlabeled, accidents, config, report)
    labeled.sort(key=lambda e: (e.driver_id, e.t_end))
    log.info("built %d examples (%s)", len(labeled), dict(report))
    return labeled


def stack_examples(examples: list[Example]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(data [E, N, C, L] float32, labels [E], driver ids [E])."""
    X = np.stack([e.data for e in examples]).astype(np.float32, copy=False)
    y = np.array([e.label for e in examples], dtype=np.int64)
    g = np.array([e.driver_id for e in examples])
    return X, y, g
