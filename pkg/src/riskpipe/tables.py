"""Delimited-text tables exchanged between stages."""

from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import AccidentRecord
from .errors import DataError

TRUTH_FILENAME = "truth.csv"


def write_accidents(accidents: Iterable[AccidentRecord], path: str | Path) -> None:
    rows = sorted(accidents, key=lambda a: (a.driver_id, a.date, a.accident_type))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["driver_id", "date", "type"])
        for a in rows:
            w.writerow([a.driver_id, a.date.isoformat(), a.accident_type])


def read_accidents(path: str | Path) -> list[AccidentRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                out.append(
                    AccidentRecord(row["driver_id"], dt.date.fromisoformat(row["date"]), int(row["type"]))
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: bad accident row {i + 1}: {exc}") from exc
    return out


def write_truth(truth: dict[str, float], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["driver_id", "latent_risk"])
        for driver in sorted(truth):
            w.writerow([driver, repr(float(truth[driver]))])


def read_truth(path: str | Path, *, oracle: bool = False) -> dict[str, float]:
    """Latent risk per driver. Only oracle panels may look at it."""
    if not oracle:
        raise PermissionError("truth.csv is reserved for oracle comparisons; pass oracle=True")
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["driver_id"]: float(row["latent_risk"]) for row in csv.DictReader(fh)}


def write_labels(rows: Iterable[tuple[str, str, int, int]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example_id", "driver_id", "t_end", "label"])
        for row in rows:
            w.writerow(list(row))


def read_labels(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["t_end"] = int(r["t_end"])
        r["label"] = int(r["label"])
    return rows


def write_matrix(path: str | Path, ids: list[str], names: list[str], X: np.ndarray) -> None:
    """One header row of column names, one row per id; floats in repr form."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["example_id", *names])
        for i, ident in enumerate(ids):
            w.writerow([ident, *(repr(float(v)) for v in X[i])])


def read_matrix(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    X = np.asarray(rows, dtype=np.float64).reshape(len(ids), len(header) - 1)
    return ids, header[1:], X
