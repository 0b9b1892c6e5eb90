import copy
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

# Smallest config that still exercises every stage in a few seconds.
TINY = {
    "experiment": {"name": "tiny", "seed": 3},
    "data": {
        "n_drivers": 30,
        "lambda0": 2.0,
        "study_days": 40,
        "fleet": {"trips_per_day": 0.5, "trip_median_s": 600.0},
    },
    "study": {"window_length_s": 60, "windows_per_example": 3, "horizon_days": 40, "folds": 3},
    "split": {"restarts": 4},
    "forest": {"grid": {"n_trees": [10], "min_samples_leaf": [1, 3]}},
    "net": {"kernel_sizes": [7, 3, 3], "feature_maps": 4, "train": {"lr": 0.01, "max_epochs": 2}},
}


@pytest.fixture
def tiny_config():
    return copy.deepcopy(TINY)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SIGNAL_SEEDS = (0, 1, 2)
NULL_SEEDS = (0, 1, 2, 3, 4)


class DeskRuns:
    """Desk-scale experiments shared by the end-to-end tests.

    Runs live under ``$RISKPIPE_TEST_RUNS`` when set, so repeated sessions
    reuse the pipeline cache; otherwise under a fresh temporary directory.
    """

    def __init__(self, root):
        self.root = Path(root)
        self._done = {}

    def run(self, preset, seed):
        from riskpipe.pipeline import run_pipeline

        key = (preset, seed)
        if key not in self._done:
            out = self.root / f"{preset}-s{seed}"
            t0 = time.perf_counter()
            prov = run_pipeline(preset, out, seed=seed)
            self._done[key] = (out, prov, time.perf_counter() - t0)
        return self._done[key]

    def report(self, preset, seed):
        out = self.run(preset, seed)[0]
        return json.loads((out / "evaluate" / "report.json").read_text())


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    root = os.environ.get("RISKPIPE_TEST_RUNS") or tmp_path_factory.mktemp("desk")
    return DeskRuns(root)


# acceptance summary: one line per criterion at the end of the session

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.outcome == "passed" else "FAIL"
    if hasattr(rep, "wasxfail"):
        detail = f"{detail} [expected failure: {rep.wasxfail}]".strip()
    ACCEPTANCE[marker.args[0]] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
