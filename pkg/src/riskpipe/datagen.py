"""Synthetic fleet generator.

Each driver gets a latent risk ``r`` in [0, 1]. Risk shapes driving style
(harder and more frequent braking and turning, livelier lateral motion,
jerkier pedal use) and, in signal
mode only, the accident rate ``lambda0 * (1 + beta * r)``. In null mode the
accident process ignores ``r`` entirely, so nothing learnable links the
telemetry to the labels.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy.signal import lfilter

from .core import (
    ACCEL_AXES,
    ACCIDENT_TYPE_SHARES,
    ALL_CHANNELS,
    SECONDS_PER_DAY,
    AccidentRecord,
    DrivingSegment,
    date_to_day,
    day_to_date,
)
from .errors import ConfigError

REGIMES = ("idle", "accelerate", "cruise", "brake", "turn")
IDLE, ACCEL, CRUISE, BRAKE, TURN = range(5)

# Mean dwell time per regime (s) and where the chain goes on leaving it.
_DWELL = np.array([20.0, 15.0, 40.0, 6.0, 8.0])
_EXIT = np.array(
    [
        [0.00, 1.00, 0.00, 0.00, 0.00],
        [0.00, 0.00, 0.60, 0.15, 0.25],
        [0.00, 0.35, 0.00, 0.40, 0.25],
        [0.35, 0.30, 0.35, 0.00, 0.00],
        [0.00, 0.55, 0.45, 0.00, 0.00],
    ]
)

G_KMH_PER_S = 9.80665 * 3.6  # 1 g sustained for 1 s, in km/h
# Right-hand traffic: roads tilt toward the shoulder, biasing lateral acceleration.
ROAD_CROSS_SLOPE_G = 0.02
LOWPASS_TAU_S = 3.0

# Fraction of drivers with no accident at beta = 0 (all accident types).
NO_ACCIDENT_SHARE = 0.52
DEFAULT_LAMBDA0 = -math.log(NO_ACCIDENT_SHARE)


def default_transition_matrix(risk: float = 0.0, event_gain: float = 0.0) -> np.ndarray:
    """Per-second regime transitions; risk shortens cruising and favours brake and turn exits."""
    boost = 1.0 + event_gain * risk
    dwell = _DWELL.copy()
    dwell[CRUISE] /= boost
    exits = _EXIT.copy()
    exits[:, [BRAKE, TURN]] *= boost
    exits /= exits.sum(axis=1, keepdims=True)
    stay = 1.0 - 1.0 / dwell
    P = exits * (1.0 - stay)[:, None]
    P[np.arange(5), np.arange(5)] = stay
    return P


@dataclass
class GenMode:
    mode: str = "signal"
    lambda0: float = DEFAULT_LAMBDA0
    beta: float = 4.0
    study_days: int = 548

    def __post_init__(self):
        if self.mode not in ("signal", "null"):
            raise ConfigError(f"mode must be signal|null, got {self.mode!r}")
        if not self.lambda0 > 0:
            raise ConfigError(f"lambda0 must be > 0, got {self.lambda0}")
        if self.mode == "null":
            self.beta = 0.0
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.study_days < 1:
            raise ConfigError("study_days must be >= 1")


@dataclass
class FleetConfig:
    """Schedule and style knobs; the defaults describe a full-scale fleet."""

    start_date: dt.date = dt.date(2018, 2, 1)
    trips_per_day: float = 1.6
    trip_median_s: float = 2.5 * 3600
    trip_sigma: float = 0.6
    min_trip_s: float = 60.0
    max_trip_s: float = 11 * 3600
    risk_alpha: float = 0.5
    risk_beta: float = 0.5
    brake_gain: float = 1.5
    lateral_gain: float = 1.0
    pedal_gain: float = 1.0
    event_gain: float = 1.0
    misconfigured_fraction: float = 0.2
    vmax_kmh: float = 105.0


@dataclass
class DriverProfile:
    driver_id: str
    truck_id: str
    latent_risk: float
    trips_per_day: float
    trip_median_s: float
    trip_sigma: float
    transition: np.ndarray
    cruise_pedal: float
    brake_level: float
    turn_level: float
    gains: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.latent_risk <= 1.0:
            raise ValueError("latent_risk must be in [0, 1]")
        if not np.allclose(self.transition.sum(axis=1), 1.0):
            raise ValueError("transition rows must sum to 1")


@dataclass
class Fleet:
    segments: list[DrivingSegment]
    accidents: list[AccidentRecord]
    truth: dict[str, float]
    profiles: list[DriverProfile]
    misconfig: dict[str, tuple[tuple[int, int, int], tuple[int, int, int]]]


def driver_name(i: int) -> str:
    return f"D{i:05d}"


def driver_rng(seed: int, driver_id: str, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(driver_id.encode("utf-8")), stream])


def make_profile(driver_id: str, cfg: FleetConfig, rng: np.random.Generator) -> DriverProfile:
    r = float(rng.beta(cfg.risk_alpha, cfg.risk_beta))
    return DriverProfile(
        driver_id=driver_id,
        truck_id="T" + driver_id[1:],
        latent_risk=r,
        trips_per_day=cfg.trips_per_day * float(rng.uniform(0.8, 1.2)),
        trip_median_s=cfg.trip_median_s * float(rng.uniform(0.8, 1.25)),
        trip_sigma=cfg.trip_sigma,
        transition=default_transition_matrix(r, cfg.event_gain),
        cruise_pedal=float(rng.normal(30.0, 5.0)),
        brake_level=0.12 * float(rng.uniform(0.9, 1.1)),
        turn_level=0.15 * float(rng.uniform(0.9, 1.1)),
        gains={"brake": cfg.brake_gain, "lateral": cfg.lateral_gain, "pedal": cfg.pedal_gain},
    )


def sample_regimes(P: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """First-order Markov chain at 1 s steps, simulated run by run.

    Dwell times are geometric with the self-transition probability, and the
    next regime is drawn from the off-diagonal row; this is the same law as
    stepping the chain one second at a time.
    """
    out = np.empty(n, dtype=np.int8)
    pos, state = 0, IDLE
    while pos < n:
        stay = P[state, state]
        run = int(rng.geometric(1.0 - stay)) if stay < 1.0 else n - pos
        out[pos : pos + run] = state
        pos += run
        exit_p = P[state].copy()
        exit_p[state] = 0.0
        state = int(rng.choice(5, p=exit_p / exit_p.sum()))
    return out


def _lowpass(x: np.ndarray, x0: float = 0.0) -> np.ndarray:
    a = 1.0 - math.exp(-1.0 / LOWPASS_TAU_S)
    y, _ = lfilter([a], [1.0, -(1.0 - a)], x, zi=[(1.0 - a) * x0])
    return y


@numba.njit(cache=True, nogil=True)
def _integrate_speed(acc_g, vmax):
    n = acc_g.shape[0]
    v = np.empty(n)
    a = np.empty(n)
    speed = 0.0
    for t in range(n):
        nxt = speed + acc_g[t] * G_KMH_PER_S
        if nxt < 0.0:
            nxt = 0.0
        elif nxt > vmax:
            nxt = vmax
        a[t] = (nxt - speed) / G_KMH_PER_S
        speed = nxt
        v[t] = speed
    return v, a


def synth_trip(profile: DriverProfile, n: int, rng: np.random.Generator, vmax: float = 105.0) -> np.ndarray:
    """Channel matrix [len(ALL_CHANNELS), n] for one trip (float64)."""
    r = profile.latent_risk
    g = profile.gains
    regimes = sample_regimes(profile.transition, n, rng)
    change = np.flatnonzero(np.diff(regimes)) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [n]]))
    run_regime = regimes[starts]
    n_runs = len(starts)
    jitter = rng.uniform(0.7, 1.3, n_runs)
    direction = np.where(rng.random(n_runs) < 0.5, 1.0, -1.0)

    long_level = np.select(
        [run_regime == ACCEL, run_regime == BRAKE, run_regime == TURN],
        [0.08 * jitter, -profile.brake_level * (1.0 + g["brake"] * r) * jitter, -0.02 * jitter],
        0.0,
    )
    lat_level = np.where(run_regime == TURN, direction * profile.turn_level * (1.0 + g["lateral"] * r) * jitter, 0.0)
    pedal_level = np.select(
        [run_regime == ACCEL, run_regime == CRUISE, run_regime == TURN],
        [55.0 * jitter * (1.0 + 0.25 * g["pedal"] * r), np.full(n_runs, profile.cruise_pedal), np.full(n_runs, 12.0)],
        0.0,
    )
    retarder_level = np.where(
        run_regime == BRAKE, -(15.0 + 25.0 * rng.random(n_runs)) * (1.0 + 0.5 * g["brake"] * r), 0.0
    )

    acc_target = _lowpass(np.repeat(long_level, lengths))
    speed, acc_true = _integrate_speed(acc_target, vmax)
    moving = speed > 0.5

    lat = (_lowpass(np.repeat(lat_level, lengths)) + ROAD_CROSS_SLOPE_G) * moving
    lat = lat + rng.normal(0.0, 0.01 * (1.0 + g["lateral"] * r), n)
    acc_long = acc_true + rng.normal(0.0, 0.01, n)
    wbvs = acc_true + rng.normal(0.0, 0.015, n)
    vert = 1.0 + rng.normal(0.0, 0.02, n) * (1.0 + speed / 100.0)
    pedal = _lowpass(np.repeat(pedal_level, lengths)) + rng.normal(0.0, 2.0 * (1.0 + g["pedal"] * r), n)
    pedal = np.clip(pedal, 0.0, 100.0)
    torque = np.clip(150.0 + 25.0 * pedal + rng.normal(0.0, 40.0, n), 0.0, 2600.0)
    retarder = _lowpass(np.repeat(retarder_level, lengths)) + rng.normal(0.0, 0.5, n)
    wheel = np.clip(speed + rng.normal(0.0, 0.3, n), 0.0, None)

    rows = {
        "AccLat": lat,
        "AccLong": acc_long,
        "AccVert": vert,
        "AccelPedalPos": pedal,
        "EngineTorque": torque,
        "RetarderTorque": retarder,
        "AccLongWBVS": wbvs,
        "WheelSpeed": wheel,
    }
    return np.stack([rows[c] for c in ALL_CHANNELS])


def trip_schedule(profile: DriverProfile, study_days: int, start_day: int, cfg: FleetConfig, rng) -> list[tuple[int, int]]:
    """(start_time, duration_s) of every trip, chronological and non-overlapping."""
    trips = []
    last_end = -1
    for day in range(study_days):
        k = int(rng.poisson(profile.trips_per_day))
        if k == 0:
            continue
        offsets = np.sort(rng.uniform(6 * 3600, 20 * 3600, k))
        durations = np.exp(rng.normal(math.log(profile.trip_median_s), profile.trip_sigma, k))
        durations = np.clip(durations, cfg.min_trip_s, cfg.max_trip_s)
        for off, dur in zip(offsets, durations):
            start = (start_day + day) * SECONDS_PER_DAY + int(off)
            if start < last_end + 60:
                continue
            dur = int(dur)
            trips.append((start, dur))
            last_end = start + dur
    return trips


def accident_types(n: int, rng: np.random.Generator) -> np.ndarray:
    types = np.array(sorted(ACCIDENT_TYPE_SHARES))
    p = np.array([ACCIDENT_TYPE_SHARES[t] for t in types])
    return rng.choice(types, size=n, p=p / p.sum())


def draw_accidents(profile: DriverProfile, mode: GenMode, start_day: int, rng) -> list[AccidentRecord]:
    rate = mode.lambda0 * (1.0 + mode.beta * profile.latent_risk)
    k = int(rng.poisson(rate))
    days = np.sort(rng.integers(0, mode.study_days, k))
    types = accident_types(k, rng)
    return [AccidentRecord(profile.driver_id, day_to_date(start_day + int(d)), int(t)) for d, t in zip(days, types)]


def random_transform(rng: np.random.Generator) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    perm = tuple(int(i) for i in rng.permutation(3))
    signs = tuple(int(s) for s in rng.choice([-1, 1], 3))
    return perm, signs


def is_identity(perm, signs) -> bool:
    return tuple(perm) == (0, 1, 2) and tuple(signs) == (1, 1, 1)


def gen_misconfigured_truck(
    segments: list[DrivingSegment],
    permutation: tuple[int, int, int] | None = None,
    signs: tuple[int, int, int] | None = None,
    seed: int | None = None,
) -> list[DrivingSegment]:
    """Scramble the accelerometer axes of every segment.

    Output axis ``i`` of (AccLat, AccLong, AccVert) reads input axis
    ``permutation[i]`` multiplied by ``signs[i]``. AccLongWBVS is untouched.
    With no permutation given, one is drawn from ``seed``.
    """
    if permutation is None or signs is None:
        permutation, signs = random_transform(np.random.default_rng(seed))
    if sorted(permutation) != [0, 1, 2]:
        raise ValueError(f"not a permutation of the three axes: {permutation}")
    if any(s not in (-1, 1) for s in signs):
        raise ValueError(f"signs must be +-1, got {signs}")
    out = []
    for seg in segments:
        idx = [seg.channels.index(a) for a in ACCEL_AXES]
        values = seg.values.copy()
        src = seg.values[idx]
        for i, row in enumerate(idx):
            values[row] = signs[i] * src[permutation[i]]
        out.append(seg.with_values(values))
    return out


def gen_driver(
    index: int, mode: GenMode, cfg: FleetConfig, seed: int
) -> tuple[list[DrivingSegment], list[AccidentRecord], DriverProfile, tuple | None]:
    driver_id = driver_name(index)
    prof_rng = driver_rng(seed, driver_id, 0)
    profile = make_profile(driver_id, cfg, prof_rng)
    start_day = date_to_day(cfg.start_date)
    sched_rng = driver_rng(seed, driver_id, 1)
    segments = []
    for start, dur in trip_schedule(profile, mode.study_days, start_day, cfg, sched_rng):
        values = synth_trip(profile, dur, sched_rng, cfg.vmax_kmh)
        segments.append(
            DrivingSegment(driver_id, profile.truck_id, start, values.astype(np.float32), ALL_CHANNELS, 1.0)
        )
    accidents = draw_accidents(profile, mode, start_day, driver_rng(seed, driver_id, 2))
    mis_rng = driver_rng(seed, driver_id, 3)
    transform = None
    if mis_rng.random() < cfg.misconfigured_fraction:
        transform = random_transform(mis_rng)
        while is_identity(*transform):
            transform = random_transform(mis_rng)
        segments = gen_misconfigured_truck(segments, *transform)
    return segments, accidents, profile, transform


def gen_fleet(n_drivers: int, mode: GenMode, seed: int, cfg: FleetConfig | None = None, n_jobs: int = 1) -> Fleet:
    """Generate a fleet; drivers are independent so ``n_jobs`` never changes the output."""
    if n_drivers < 2:
        raise ConfigError("n_drivers must be >= 2")
    cfg = cfg or FleetConfig()
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(lambda i: gen_driver(i, mode, cfg, seed), range(n_drivers)))
    else:
        results = [gen_driver(i, mode, cfg, seed) for i in range(n_drivers)]
    segments, accidents, profiles, misconfig = [], [], [], {}
    for segs, accs, prof, transform in results:
        segments.extend(segs)
        accidents.extend(accs)
        profiles.append(prof)
        if transform is not None:
            misconfig[prof.truck_id] = transform
    truth = {p.driver_id: p.latent_risk for p in profiles}
    return Fleet(segments, accidents, truth, profiles, misconfig)


# --------------------------------------------------------------------------
# raw text export (input format of the ingest stage)
# --------------------------------------------------------------------------

RAW_COLUMNS = {
    "Acc_Lat": "AccLat",
    "Acc_Long": "AccLong",
    "Acc_Vert": "AccVert",
    "Acc_Long_WBVS": "AccLongWBVS",
    "AccelPedalPos1": "AccelPedalPos",
    "ActualEngineTorque": "EngineTorque",
    "ActualRetarderPercentTorque": "RetarderTorque",
    "WheelBasedVehicleSpeed": "WheelSpeed",
}
TWO_HZ = frozenset({"AccLat", "AccLong", "AccVert", "AccLongWBVS", "EngineTorque"})


def write_raw_traces(
    segments: list[DrivingSegment], out_dir: str | Path, seed: int = 0, max_piece_s: int = 1800
) -> Path:
    """Export segments as per-trip text files at native rates plus an assignment file.

    Two-hertz channels get a symmetric half-second split around each 1 Hz
    value so their pair means reproduce the segment. Long segments are cut
    into back-to-back trip files to exercise merging.
    """
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    header = ["timestamp", *RAW_COLUMNS]
    names = list(RAW_COLUMNS.values())
    spans: dict[tuple[str, str], list[int]] = {}
    for seg in sorted(segments, key=lambda s: (s.truck_id, s.start_time)):
        vals = seg.values.astype(np.float64)
        pos = 0
        while pos < seg.length:
            piece = min(seg.length - pos, int(rng.integers(max_piece_s // 2, max_piece_s + 1)))
            t0 = seg.start_time + pos
            path = out / "traces" / seg.truck_id / f"{t0}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for k in range(piece):
                    t = t0 + k
                    first, second = [f"{t}"], [f"{t}.5"]
                    for name in names:
                        v = vals[seg.channels.index(name), pos + k]
                        if name in TWO_HZ:
                            d = float(rng.uniform(-0.01, 0.01)) * (abs(v) + 1e-3)
                            first.append(repr(float(v - d)))
                            second.append(repr(float(v + d)))
                        else:
                            first.append(repr(float(v)))
                            second.append("")
                    w.writerow(first)
                    w.writerow(second)
            pos += piece
        span = spans.setdefault((seg.driver_id, seg.truck_id), [seg.start_time, seg.end_time])
        span[0] = min(span[0], seg.start_time)
        span[1] = max(span[1], seg.end_time)
    with open(out / "assignment.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["driver_id", "truck_id", "start", "end"])
        for (driver, truck), (s, e) in sorted(spans.items()):
            w.writerow([driver, truck, s, e])
    return out
