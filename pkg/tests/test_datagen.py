from collections import Counter

import numpy as np
import pytest

from riskpipe.core import ACCEL_AXES, ACCIDENT_TYPE_SHARES, ALL_CHANNELS, DrivingSegment
from riskpipe.datagen import (
    FleetConfig,
    GenMode,
    accident_types,
    default_transition_matrix,
    gen_fleet,
    gen_misconfigured_truck,
    is_identity,
    random_transform,
)
from riskpipe.errors import ConfigError
from riskpipe.evaluate import auc_score
from riskpipe.ingest import inverse_transform

SMALL = FleetConfig(trips_per_day=0.2, trip_median_s=300.0)


def accident_counts(fleet):
    n = Counter(a.driver_id for a in fleet.accidents)
    ids = sorted(fleet.truth)
    return np.array([fleet.truth[d] for d in ids]), np.array([n[d] for d in ids])


@pytest.fixture(scope="module")
def null_fleet():
    return gen_fleet(200, GenMode("null", lambda0=2.0, study_days=20), seed=11, cfg=SMALL)


@pytest.fixture(scope="module")
def signal_fleet():
    return gen_fleet(200, GenMode("signal", study_days=20), seed=11, cfg=SMALL)


def test_null_mode_forces_zero_beta():
    assert GenMode("null", beta=4.0).beta == 0.0


def test_null_accidents_independent_of_risk(null_fleet):
    r, n = accident_counts(null_fleet)
    observed = np.corrcoef(r, n)[0, 1]
    perm_rng = np.random.default_rng(0)
    null = np.array([np.corrcoef(perm_rng.permutation(r), n)[0, 1] for _ in range(999)])
    p = (1 + np.sum(np.abs(null) >= abs(observed))) / 1000
    assert p > 0.01


def test_signal_risk_predicts_accidents(signal_fleet):
    r, n = accident_counts(signal_fleet)
    assert auc_score(r, (n > 0).astype(int)) >= 0.75


def test_riskier_drivers_brake_more(signal_fleet):
    lon = ALL_CHANNELS.index("AccLong")
    hard = Counter()
    total = Counter()
    for s in signal_fleet.segments:
        if s.truck_id in signal_fleet.misconfig:
            continue
        hard[s.driver_id] += int(np.sum(s.values[lon] < -0.1))
        total[s.driver_id] += s.length
    ids = [d for d in total if total[d] > 0]
    rate = np.array([hard[d] / total[d] for d in ids])
    risk = np.array([signal_fleet.truth[d] for d in ids])
    assert np.corrcoef(risk, rate)[0, 1] > 0.3


def test_transition_rows_sum_to_one():
    for r in (0.0, 0.5, 1.0):
        P = default_transition_matrix(r, 1.0)
        assert np.allclose(P.sum(axis=1), 1.0) and (P >= 0).all()


def test_accident_type_histogram():
    types = accident_types(10_000, np.random.default_rng(1))
    total = sum(ACCIDENT_TYPE_SHARES.values())
    freq = Counter(types.tolist())
    for t, share in ACCIDENT_TYPE_SHARES.items():
        assert abs(freq[t] / 10_000 - share / total) < 0.02


def test_misconfig_identity_is_noop(rng):
    seg = DrivingSegment("D", "T", 0, rng.normal(size=(len(ALL_CHANNELS), 40)).astype(np.float32))
    (out,) = gen_misconfigured_truck([seg], (0, 1, 2), (1, 1, 1))
    assert np.array_equal(out.values, seg.values)


def test_misconfig_inverse_recovers_original(rng):
    seg = DrivingSegment("D", "T", 0, rng.normal(size=(len(ALL_CHANNELS), 40)).astype(np.float32))
    idx = [ALL_CHANNELS.index(a) for a in ACCEL_AXES]
    for _ in range(20):
        perm, signs = random_transform(rng)
        (bad,) = gen_misconfigured_truck([seg], perm, signs)
        iperm, isigns = inverse_transform(perm, signs)
        (good,) = gen_misconfigured_truck([bad], iperm, isigns)
        assert np.array_equal(good.values, seg.values)
        if not is_identity(perm, signs):
            assert not np.array_equal(bad.values[idx], seg.values[idx])
    wb = ALL_CHANNELS.index("AccLongWBVS")
    assert np.array_equal(bad.values[wb], seg.values[wb])


def test_misconfig_rejects_non_permutation(rng):
    seg = DrivingSegment("D", "T", 0, np.zeros((len(ALL_CHANNELS), 5), np.float32))
    with pytest.raises(ValueError):
        gen_misconfigured_truck([seg], (0, 0, 1), (1, 1, 1))


def test_fleet_deterministic_across_jobs():
    mode = GenMode("signal", lambda0=2.0, study_days=10)
    a = gen_fleet(8, mode, seed=5, cfg=SMALL, n_jobs=1)
    b = gen_fleet(8, mode, seed=5, cfg=SMALL, n_jobs=3)
    assert a.segments == b.segments and a.accidents == b.accidents and a.truth == b.truth
    c = gen_fleet(8, mode, seed=6, cfg=SMALL)
    assert c.truth != a.truth


def test_gen_mode_validation():
    with pytest.raises(ConfigError):
        GenMode("other")
    with pytest.raises(ConfigError):
        GenMode(lambda0=0.0)
    with pytest.raises(ConfigError):
        gen_fleet(1, GenMode(), seed=0)
