"""Experiment configuration: defaults, YAML loading and validation.

A config is a nested mapping. Keys not present in ``DEFAULTS`` are
rejected, except inside the open tables listed in ``OPEN_TABLES`` (grid
and search spaces). Every section is turned into the typed objects the
modules use so that bad values fail before any stage runs.
"""

from __future__ import annotations

import copy
import datetime as dt
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .core import PREDICTABLE_TYPES, StudyConfig
from .datagen import DEFAULT_LAMBDA0, FleetConfig, GenMode
from .deepnet import NetConfig, TrainConfig
from .deepnet.train import TUNABLE
from .errors import ConfigError
from .forest import ForestParams, expand_grid

DEFAULTS: dict = {
    "experiment": {"name": "experiment", "seed": 0},
    "data": {
        "source": "synthetic",
        "n_drivers": 100,
        "mode": "signal",
        "lambda0": DEFAULT_LAMBDA0,
        "beta": 4.0,
        "study_days": 548,
        "raw_export": False,
        "raw_dir": None,
        "accidents": None,
        "fleet": {
            "start_date": "2018-02-01",
            "trips_per_day": 1.6,
            "trip_median_s": 9000.0,
            "trip_sigma": 0.6,
            "risk_alpha": 0.5,
            "risk_beta": 0.5,
            "brake_gain": 1.5,
            "lateral_gain": 1.0,
            "pedal_gain": 1.0,
            "event_gain": 1.0,
            "misconfigured_fraction": 0.2,
        },
    },
    "study": {
        "window_length_s": 3600,
        "windows_per_example": 60,
        "horizon_days": 365,
        "predictable_types": sorted(PREDICTABLE_TYPES),
        "test_fraction": 0.30,
        "folds": 5,
        "gap_tolerance_s": 2.0,
        "post_accident_policy": "exclude",
    },
    "split": {"tol": 0.05, "restarts": 32},
    "features": {"q": 0.05, "empty_selection": "all"},
    "forest": {
        "grid": {"n_trees": [500], "max_depth": [None], "min_samples_leaf": [1]},
        "max_features": "sqrt",
        "class_weight": "balanced",
    },
    "net": {
        "feature_maps": 10,
        "kernel_sizes": [31, 8, 4],
        "strides": [2, 2, 1],
        "dropout": 0.57,
        "train": {
            "batch_size": 32,
            "lr": None,
            "weight_decay": 1e-4,
            "patience": 3,
            "max_epochs": 30,
            "gamma": 2.0,
            "alpha": None,
            "lr_iters": 100,
        },
        "search": {"budget": 0, "space": {}},
    },
    "runtime": {"n_jobs": 1},
}

OPEN_TABLES = {("forest", "grid"), ("net", "search", "space")}


def _merge(base: dict, override: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        here = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(here)}")
        if here in OPEN_TABLES:
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(here)} must be a mapping")
            out[key] = copy.deepcopy(value)
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(here)} must be a mapping")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


@dataclass
class Experiment:
    raw: dict
    seed: int
    study: StudyConfig
    mode: GenMode
    fleet: FleetConfig
    forest_grid: list[ForestParams]
    net: NetConfig
    train: TrainConfig

    def section(self, *keys):
        node = self.raw
        for k in keys:
            node = node[k]
        return node


def validate(raw: dict) -> Experiment:
    try:
        cfg = _merge(DEFAULTS, raw)
        seed = cfg["experiment"]["seed"]
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("experiment.seed must be a non-negative integer")
        data = cfg["data"]
        if data["source"] not in ("synthetic", "raw"):
            raise ConfigError("data.source must be synthetic|raw")
        if data["source"] == "raw" and not (data["raw_dir"] and data["accidents"]):
            raise ConfigError("data.source=raw needs data.raw_dir and data.accidents")
        if not isinstance(data["n_drivers"], int) or data["n_drivers"] < 2:
            raise ConfigError("data.n_drivers must be an integer >= 2")
        st = cfg["study"]
        study = StudyConfig(
            window_length_s=int(st["window_length_s"]),
            windows_per_example=int(st["windows_per_example"]),
            horizon_days=int(st["horizon_days"]),
            predictable_types=frozenset(st["predictable_types"]),
            test_fraction=float(st["test_fraction"]),
            folds=int(st["folds"]),
            gap_tolerance_s=float(st["gap_tolerance_s"]),
            post_accident_policy=st["post_accident_policy"],
            rng_seed=seed,
        )
        mode = GenMode(data["mode"], float(data["lambda0"]), float(data["beta"]), int(data["study_days"]))
        fl = dict(data["fleet"])
        start = fl.pop("start_date")
        fleet = FleetConfig(start_date=dt.date.fromisoformat(str(start)), **{k: float(v) for k, v in fl.items()})
        if not 0.0 <= fleet.misconfigured_fraction <= 1.0:
            raise ConfigError("data.fleet.misconfigured_fraction must be in [0, 1]")
        if not 0.0 < cfg["split"]["tol"] < 1.0:
            raise ConfigError("split.tol must be in (0, 1)")
        if not 0.0 < cfg["features"]["q"] < 1.0:
            raise ConfigError("features.q must be in (0, 1)")
        if cfg["features"]["empty_selection"] not in ("all", "none"):
            raise ConfigError("features.empty_selection must be all|none")
        fcfg = cfg["forest"]
        grid = expand_grid(fcfg["grid"])
        grid = [
            ForestParams(**{**p.__dict__, "max_features": fcfg["max_features"], "class_weight": fcfg["class_weight"]})
            for p in grid
        ]
        ncfg = cfg["net"]
        net = NetConfig(
            channels=6,
            feature_maps=int(ncfg["feature_maps"]),
            kernel_sizes=tuple(ncfg["kernel_sizes"]),
            strides=tuple(ncfg["strides"]),
            dropout=float(ncfg["dropout"]),
            window_length=study.window_length_s,
            n_windows=study.windows_per_example,
        )
        train = TrainConfig(**ncfg["train"])
        search = ncfg["search"]
        if search["budget"] and not search["space"]:
            raise ConfigError("net.search.budget > 0 needs a non-empty net.search.space")
        bad = set(search["space"]) - set(TUNABLE)
        if bad:
            raise ConfigError(f"net.search.space: unknown keys {sorted(bad)}")
        if int(cfg["runtime"]["n_jobs"]) < 1:
            raise ConfigError("runtime.n_jobs must be >= 1")
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return Experiment(cfg, seed, study, mode, fleet, grid, net, train)


def load_config(source, seed: int | None = None) -> Experiment:
    """Load from a YAML path, a preset name or a mapping; ``seed`` overrides experiment.seed."""
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        text = None
        path = Path(source)
        if path.exists():
            text = path.read_text(encoding="utf-8")
        else:
            try:
                text = resources.files("riskpipe.presets").joinpath(f"{source}.yaml").read_text(encoding="utf-8")
            except FileNotFoundError:
                raise ConfigError(f"no config file or preset named {source!r}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}: top level must be a mapping")
    if seed is not None:
        raw.setdefault("experiment", {})["seed"] = int(seed)
    return validate(raw)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("riskpipe.presets").iterdir() if p.name.endswith(".yaml"))
