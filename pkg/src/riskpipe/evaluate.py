"""ROC curves, cross-fold averaging, fold reports and timeline drawings."""

from __future__ import annotations

import colorsys
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable
from xml.sax.saxutils import escape

import numpy as np

from .core import day_index, day_to_date

FPR_GRID = np.linspace(0.0, 1.0, 101)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    thresholds: np.ndarray | None = None

    def points(self) -> list[list[float]]:
        return [[float(a), float(b)] for a, b in zip(self.fpr, self.tpr)]


def _check_binary(labels) -> np.ndarray:
    y = np.asarray(labels).astype(np.int64)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if y.sum() == 0 or y.sum() == len(y):
        raise ValueError("ROC needs both classes")
    return y


def roc_auc(scores, labels) -> RocCurve:
    """Threshold sweep over descending unique scores; trapezoidal area."""
    s = np.asarray(scores, dtype=np.float64)
    y = _check_binary(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # last index of each distinct score
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (len(y) - y.sum())]
    thresholds = np.r_[np.inf, s[last]]
    return RocCurve(fpr, tpr, float(np.trapezoid(tpr, fpr)), thresholds)


def auc_score(scores, labels) -> float:
    return roc_auc(scores, labels).auc


def _tpr_on_grid(curve: RocCurve, grid: np.ndarray) -> np.ndarray:
    # within a vertical run keep the top point so interpolation is right-continuous
    fpr, idx = np.unique(curve.fpr[::-1], return_index=True)
    tpr = curve.tpr[::-1][idx]
    return np.interp(grid, fpr, tpr)


def average_roc(curves: list[RocCurve], grid: np.ndarray = FPR_GRID) -> RocCurve:
    """Vertical averaging: mean TPR at each grid FPR."""
    if not curves:
        raise ValueError("need at least one curve")
    tpr = np.mean([_tpr_on_grid(c, grid) for c in curves], axis=0)
    fpr = np.asarray(grid, dtype=np.float64)
    if tpr[0] > 0:
        fpr, tpr = np.r_[0.0, fpr], np.r_[0.0, tpr]
    return RocCurve(fpr, tpr, float(np.trapezoid(tpr, fpr)))


def fold_report(
    val_aucs,
    test_aucs,
    protocol: str,
    val_curves: list[RocCurve] | None = None,
    test_curves: list[RocCurve] | None = None,
) -> dict:
    """Summary of a cross-validated model.

    ``protocol="retrain"``: one model refit on the whole training part, so
    ``test_aucs`` holds a single value. ``protocol="fold_mean"``: every fold
    model is scored on the test part and their AUCs are averaged.
    """
    val = np.asarray(val_aucs, dtype=np.float64)
    test = np.atleast_1d(np.asarray(test_aucs, dtype=np.float64))
    if len(val) < 2:
        raise ValueError("fold_report needs at least 2 folds")
    if protocol == "retrain":
        if len(test) != 1:
            raise ValueError("retrain protocol takes exactly one test AUC")
    elif protocol != "fold_mean":
        raise ValueError(f"unknown protocol {protocol!r}")
    out = {
        "protocol": protocol,
        "val_aucs": [float(v) for v in val],
        "val_auc_mean": float(val.mean()),
        "val_auc_std": float(val.std(ddof=0)),
        "test_aucs": [float(t) for t in test],
        "test_auc": float(test.mean()),
        "roc_points": {},
    }
    if val_curves:
        out["roc_points"]["validation"] = average_roc(val_curves).points()
    if test_curves:
        out["roc_points"]["test"] = average_roc(test_curves).points()
    return out


# timelines


def type_color(accident_type: int, n_types: int = 30) -> str:
    r, g, b = colorsys.hsv_to_rgb(((accident_type - 1) * 0.618034) % 1.0, 0.75, 0.85)
    return f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}"


def risk_color(score: float) -> str:
    """Green (low) to red (high)."""
    s = float(np.clip(score, 0.0, 1.0))
    r, g, b = colorsys.hsv_to_rgb((1.0 - s) / 3.0, 0.85, 0.9)
    return f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}"


def _svg(rows: list[str], marks: list[tuple[int, float, str, str]], x_range: tuple[float, float], title: str) -> str:
    left, top, row_h, width = 110, 30, 14, 700
    height = top + row_h * max(len(rows), 1) + 20
    lo, hi = x_range
    span = hi - lo if hi > lo else 1.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{left + width + 20}" height="{height}" '
        f'font-family="sans-serif" font-size="10">',
        f'<text x="{left}" y="15">{escape(title)}</text>',
    ]
    for i, name in enumerate(rows):
        y = top + i * row_h + row_h / 2
        out.append(f'<text x="{left - 5}" y="{y + 3:.1f}" text-anchor="end">{escape(name)}</text>')
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + width}" y2="{y:.1f}" stroke="#dddddd"/>')
    for row, x, color, label in marks:
        cx = left + (x - lo) / span * width
        cy = top + row * row_h + row_h / 2
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.1f}" r="4" fill="{color}"><title>{escape(label)}</title></circle>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def timeline_export(kind: str, data: Iterable, out_prefix: str | Path) -> tuple[Path, Path]:
    """Per-driver timeline as ``<prefix>.csv`` and ``<prefix>.svg``.

    ``kind="accidents"``: ``data`` is a list of AccidentRecord; marks are
    colored by accident type. ``kind="predictions"``: ``data`` holds
    (driver_id, t_end, score) rows; marks are colored by score. Each driver
    with at least one record gets one timeline row.
    """
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path, svg_path = prefix.with_suffix(".csv"), prefix.with_suffix(".svg")
    if kind == "accidents":
        recs = sorted(data, key=lambda a: (a.driver_id, a.date, a.accident_type))
        items = [(a.driver_id, a.day, a.date.isoformat(), a.accident_type, type_color(a.accident_type)) for a in recs]
        header = ["driver_id", "row", "date", "type"]
        title = "accidents by driver"
    elif kind == "predictions":
        recs = sorted((str(d), int(t), float(s)) for d, t, s in data)
        items = [(d, t / 86400.0, day_to_date(day_index(t - 1)).isoformat(), s, risk_color(s)) for d, t, s in recs]
        header = ["driver_id", "row", "date", "score"]
        title = "estimated risk by driver"
    else:
        raise ValueError(f"unknown timeline kind {kind!r}")

    drivers = sorted({it[0] for it in items})
    row_of = {d: i for i, d in enumerate(drivers)}
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for d, _, date, value, _ in items:
            w.writerow([d, row_of[d], date, value if kind == "accidents" else repr(value)])
    xs = [it[1] for it in items]
    x_range = (min(xs), max(xs)) if xs else (0.0, 1.0)
    marks = [(row_of[d], x, color, f"{d} {date} {value}") for d, x, date, value, color in items]
    svg_path.write_text(_svg(drivers, marks, x_range, title), encoding="utf-8")
    return csv_path, svg_path
