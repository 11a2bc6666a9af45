import warnings
from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from windcorrect.datagen import BiasProfile, FarmConfig, generate_farm
from windcorrect.errors import SplitError
from windcorrect.sampler import (
    HORIZON, FeatureContext, assign_days, build_samples, hourly_power, load_samples, save_samples, split_monthly,
)


@pytest.fixture(scope="module")
def farm30():
    return generate_farm(FarmConfig(n_turbines=1, start_time="2021-06-01T00:00:00Z", duration_days=30, rng_seed=2),
                         BiasProfile())


def _brute_force_count(nwp, scada):
    """Issuances whose 49 hourly target bins are all fully covered by SCADA rows."""
    def secs(values):
        return np.asarray(values, dtype="datetime64[s]").astype(np.int64)

    stamps = set(secs(scada["timestamp"]).tolist())
    k = 0
    for t0 in secs(nwp["issue_time"].unique()):
        ok = True
        for h in range(HORIZON):
            hour = int(t0) + 3600 * h
            if not all(hour + 600 * j in stamps for j in range(6)):
                ok = False
                break
        k += ok
    return k


def test_thirty_days_gives_112_samples(farm30):
    samples = build_samples(farm30.nwp, farm30.scada["T01"])
    oracle = _brute_force_count(farm30.nwp, farm30.scada["T01"])
    assert oracle == 4 * 30 - 8
    assert len(samples) == oracle


def test_sample_shape_and_lead(farm30):
    nwp = farm30.nwp[farm30.nwp["issue_time"] == farm30.nwp["issue_time"].iloc[0]]
    (s,) = build_samples(nwp, farm30.scada["T01"])
    assert s.features.shape == (HORIZON, 10) and s.targets.shape == (HORIZON,)
    assert s.features[0, 9] == 0.0 and s.features[48, 9] == 48.0
    assert np.all(np.diff(s.times) == np.timedelta64(3600, "s"))


def test_outage_drops_only_affected_samples(farm30):
    scada = farm30.scada["T01"]
    full = build_samples(farm30.nwp, scada)
    cut_from, cut_to = np.datetime64("2021-06-10T03:00:00"), np.datetime64("2021-06-10T05:00:00")
    ts = scada["timestamp"].to_numpy()
    partial = build_samples(farm30.nwp, scada[(ts < cut_from) | (ts >= cut_to)])
    hit = [s for s in full if s.times[0] <= cut_from + np.timedelta64(3600, "s") and s.times[-1] >= cut_from]
    assert hit
    assert len(partial) == len(full) - len(hit)
    kept = {s.t0: s for s in partial}
    for s in full:
        if s not in hit:
            np.testing.assert_array_equal(kept[s.t0].targets, s.targets)


def test_hourly_bin_needs_half_the_rows():
    t = pd.date_range("2021-01-01", periods=6, freq="10min").to_numpy().astype("datetime64[s]")
    df = pd.DataFrame({"turbine_id": "T01", "timestamp": t[[0, 1, 2]], "power_kw": [1.0, 2.0, 3.0]})
    np.testing.assert_allclose(hourly_power(df)["T01"][1], [2.0])
    df2 = df.iloc[:2]
    assert np.isnan(hourly_power(df2)["T01"][1][0])


def test_no_overlap_warns(farm30):
    scada = farm30.scada["T01"].copy()
    scada["timestamp"] = scada["timestamp"] + np.timedelta64(400, "D")
    with pytest.warns(RuntimeWarning):
        assert build_samples(farm30.nwp, scada) == []


def test_thirty_day_month_runs():
    days = [date(2021, 6, 1) + timedelta(d) for d in range(30)]
    a = assign_days(days, 3)
    parts = [a[d] for d in days]
    assert parts.count("validation") == 6 and parts.count("test") == 6 and parts.count("train") == 18
    assert assign_days(days, 3) == a


def test_two_turbines_share_day_map(small_farm):
    s1 = build_samples(small_farm.nwp, small_farm.scada["T01"])
    s2 = build_samples(small_farm.nwp, small_farm.scada["T02"])
    a = split_monthly(s1, 9).assignment
    b = split_monthly(s2, 9).assignment
    assert a == b


def test_split_too_short():
    with pytest.raises(SplitError):
        assign_days([date(2021, 1, 1), date(2021, 1, 2)], 0)
    with pytest.raises(SplitError):
        assign_days([], 0)


def test_strict_boundaries_drop_crossing_windows(small_samples, small_farm):
    samples = build_samples(small_farm.nwp, small_farm.scada["T01"])
    loose = split_monthly(samples, 0)
    strict = split_monthly(samples, 0, strict_boundaries=True)
    n_loose = sum(len(loose.indices(p)) for p in ("train", "validation", "test"))
    n_strict = sum(len(strict.indices(p)) for p in ("train", "validation", "test"))
    assert n_loose == len(samples) > n_strict
    for p in ("train", "validation", "test"):
        assert set(strict.indices(p)) <= set(loose.indices(p))


def test_save_load_round_trip(tmp_path, small_farm):
    samples = build_samples(small_farm.nwp, small_farm.scada["T01"])[:20]
    assignment = split_monthly(samples, 0).assignment
    save_samples(tmp_path, {"T01": samples}, assignment)
    loaded, a2 = load_samples(tmp_path)
    assert a2 == assignment
    assert [s.t0 for s in loaded["T01"]] == [s.t0 for s in samples]
    for s, t in zip(samples, loaded["T01"]):
        np.testing.assert_allclose(t.features, s.features, rtol=1e-11)
        np.testing.assert_allclose(t.targets, s.targets, rtol=1e-11)
