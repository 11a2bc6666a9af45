"""Forecast samples (one per NWP issuance and turbine) and the monthly split."""

from __future__ import annotations

import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import SplitError
from .ingest import FEATURE_NAMES, N_FEATURES, adjust_hub_height, encode_arrays

HORIZON = 49
PARTITIONS = ("train", "validation", "test")


@dataclass(frozen=True)
class FeatureContext:
    """Site settings needed to turn raw NWP values into predictors."""

    hub_height_m: float = 120.0
    nwp_ref_height_m: float = 100.0
    utc_offset_hours: float = 1.0
    nwp_interval_minutes: int = 15
    scada_interval_minutes: int = 10


@dataclass
class ForecastSample:
    turbine_id: str
    t0: np.datetime64
    features: np.ndarray  # (49, 10), physical units
    targets: np.ndarray  # (49,), kW

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(HORIZON) * np.timedelta64(3600, "s")

    @property
    def day(self) -> date:
        return pd.Timestamp(self.t0).date()


@dataclass
class DatasetSplit:
    train: list[int]
    validation: list[int]
    test: list[int]
    assignment: dict[date, str] = field(default_factory=dict)

    def indices(self, partition: str) -> list[int]:
        return {"train": self.train, "validation": self.validation, "test": self.test}[partition]


def _bins(keys: np.ndarray, size: int, weights: list[np.ndarray]):
    count = np.bincount(keys, minlength=size).astype(float)
    sums = [np.bincount(keys, weights=w, minlength=size) for w in weights]
    return count, sums


def hourly_power(scada: pd.DataFrame, interval_minutes: int = 10):
    """Hourly mean power per turbine.

    Returns ``{turbine_id: (first_hour, values)}`` where ``values[i]`` is the
    mean over hour ``first_hour + i`` (epoch hours) or NaN when fewer than
    half of the expected sub-hourly rows exist.
    """
    need = (60 / interval_minutes) / 2.0
    out = {}
    for tid, g in scada.groupby("turbine_id", sort=True):
        hours = g["timestamp"].to_numpy(dtype="datetime64[s]").astype(np.int64) // 3600
        h0 = int(hours.min())
        keys = hours - h0
        size = int(keys.max()) + 1
        count, (total,) = _bins(keys, size, [g["power_kw"].to_numpy(dtype=float)])
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(count >= need, total / np.maximum(count, 1), np.nan)
        out[str(tid)] = (h0, mean)
    return out


def hourly_nwp(nwp: pd.DataFrame, ctx: FeatureContext):
    """Average each issuance's sub-hourly forecasts into 49 hourly rows.

    Returns ``(issue_times, t0_hours, features)`` with ``features`` of shape
    ``(n_issue, 49, 10)``; rows with too few sub-hourly values are NaN.
    """
    issue = nwp["issue_time"].to_numpy(dtype="datetime64[s]")
    valid = nwp["valid_time"].to_numpy(dtype="datetime64[s]")
    issues, inv = np.unique(issue, return_inverse=True)
    issue_s = issues.astype(np.int64)
    t0_h = issue_s // 3600 + (issue_s % 3600 > 0)
    k = valid.astype(np.int64) // 3600 - t0_h[inv]
    keep = (k >= 0) & (k < HORIZON) & (valid >= issue)
    keys = inv[keep] * HORIZON + k[keep]
    size = len(issues) * HORIZON
    theta = np.deg2rad(nwp["wind_dir_deg"].to_numpy(dtype=float)[keep])
    count, (ws, gust, temp, s, c) = _bins(keys, size, [
        nwp["wind_speed_ms"].to_numpy(dtype=float)[keep],
        nwp["wind_gust_ms"].to_numpy(dtype=float)[keep],
        nwp["temp_c"].to_numpy(dtype=float)[keep],
        np.sin(theta), np.cos(theta),
    ])
    need = (60 / ctx.nwp_interval_minutes) / 2.0
    ok = count >= need
    n = np.where(ok, count, np.nan)
    hub = adjust_hub_height(np.where(ok, ws, 0.0) / np.where(ok, n, 1.0),
                            ctx.nwp_ref_height_m, ctx.hub_height_m)
    row_hours = (t0_h[:, None] + np.arange(HORIZON)[None, :]).ravel()
    row_time = (row_hours * 3600).astype("datetime64[s]")
    lead = (row_hours * 3600 - np.repeat(issue_s, HORIZON)) / 3600.0
    feats = encode_arrays(
        hub, gust / n, temp / n, np.rad2deg(np.arctan2(s, c)), row_time, lead, ctx.utc_offset_hours,
    )
    feats[~ok] = np.nan
    return issues, t0_h, feats.reshape(len(issues), HORIZON, N_FEATURES)


def build_samples(nwp: pd.DataFrame, scada: pd.DataFrame, ctx: FeatureContext | None = None) -> list[ForecastSample]:
    """Match every NWP issuance with each turbine's hourly power.

    Samples with any missing hourly bin (features or target) are dropped.
    The result is ordered by (turbine_id, t0).
    """
    ctx = ctx or FeatureContext()
    if len(nwp) == 0 or len(scada) == 0:
        warnings.warn("empty NWP or SCADA input; no samples built", RuntimeWarning, stacklevel=2)
        return []
    issues, t0_h, feats = hourly_nwp(nwp, ctx)
    feat_ok = ~np.isnan(feats).any(axis=(1, 2))
    samples = []
    for tid, (h0, power) in hourly_power(scada, ctx.scada_interval_minutes).items():
        idx = t0_h[:, None] + np.arange(HORIZON)[None, :] - h0
        inside = (idx >= 0) & (idx < len(power))
        targets = np.where(inside, power[np.clip(idx, 0, len(power) - 1)], np.nan)
        ok = feat_ok & ~np.isnan(targets).any(axis=1)
        for i in np.flatnonzero(ok):
            samples.append(ForecastSample(
                tid, np.datetime64(int(t0_h[i]) * 3600, "s"), feats[i].copy(), targets[i].copy(),
            ))
    if not samples:
        warnings.warn("NWP and SCADA series do not overlap; no samples built", RuntimeWarning, stacklevel=2)
    return samples


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.empty((0, HORIZON, N_FEATURES)), np.empty((0, HORIZON))
    return (np.stack([s.features for s in samples]), np.stack([s.targets for s in samples]))


def sample_times(samples) -> np.ndarray:
    return np.stack([s.times for s in samples]) if samples else np.empty((0, HORIZON), "datetime64[s]")


def run_length(n_days: int, fraction: float = 0.2) -> int:
    return int(round(fraction * n_days))


def assign_days(days, seed: int, fraction: float = 0.2) -> dict[date, str]:
    """Monthly day-to-partition map.

    Within each calendar month two non-overlapping runs of
    ``round(fraction * days_in_month)`` consecutive days are drawn (rejection
    sampling of the start days) for validation and test; all other days
    train.  Deterministic for a fixed seed.
    """
    days = sorted(set(days))
    if not days:
        raise SplitError("no days to split")
    full = [days[0] + timedelta(d) for d in range((days[-1] - days[0]).days + 1)]
    by_month = defaultdict(list)
    for d in full:
        by_month[(d.year, d.month)].append(d)
    rng = np.random.default_rng(seed)
    assignment = {}
    for key in sorted(by_month):
        mdays = by_month[key]
        n, run = len(mdays), run_length(len(mdays), fraction)
        if 2 * run > n:
            raise SplitError(f"month {key[0]}-{key[1]:02d} has {n} days, too few for two {run}-day runs")
        for d in mdays:
            assignment[d] = "train"
        if run == 0:
            continue
        while True:
            v, t = rng.integers(0, n - run + 1, size=2)
            if v + run <= t or t + run <= v:
                break
        for d in mdays[v:v + run]:
            assignment[d] = "validation"
        for d in mdays[t:t + run]:
            assignment[d] = "test"
    if "validation" not in assignment.values():
        raise SplitError("period too short to host validation and test runs in any month")
    return assignment


def split_monthly(samples, seed: int, strict_boundaries: bool = False, assignment=None) -> DatasetSplit:
    """Assign every sample to the partition of its t0 day.

    Pass a precomputed ``assignment`` to share one day map across turbines.
    With ``strict_boundaries`` samples whose 49-hour window touches a day of
    another partition are dropped.
    """
    if assignment is None:
        assignment = assign_days([s.day for s in samples], seed)
    parts = {p: [] for p in PARTITIONS}
    for i, s in enumerate(samples):
        part = assignment.get(s.day)
        if part is None:
            raise SplitError(f"sample day {s.day} missing from the day assignment")
        if strict_boundaries:
            last = pd.Timestamp(s.times[-1]).date()
            window = [s.day + timedelta(d) for d in range((last - s.day).days + 1)]
            if any(assignment.get(d, part) != part for d in window):
                continue
        parts[part].append(i)
    return DatasetSplit(parts["train"], parts["validation"], parts["test"], dict(assignment))


def save_samples(out_dir, samples_by_turbine: dict[str, list[ForecastSample]], assignment: dict[date, str]):
    """Write ``samples_<id>.csv`` per turbine and ``split.json``.

    Matrix files hold one row per (sample, step) with columns
    ``t0, step, <10 features in FeatureVector order>, target_kw``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for tid, samples in sorted(samples_by_turbine.items()):
        X, Y = stack_samples(samples)
        k = len(samples)
        df = pd.DataFrame(X.reshape(k * HORIZON, N_FEATURES), columns=list(FEATURE_NAMES))
        df.insert(0, "t0", np.repeat([pd.Timestamp(s.t0).strftime("%Y-%m-%dT%H:%M:%SZ") for s in samples], HORIZON))
        df.insert(1, "step", np.tile(np.arange(HORIZON), k))
        df["target_kw"] = Y.ravel()
        df.to_csv(out / f"samples_{tid}.csv", index=False, float_format="%.12g", lineterminator="\n")
        counts[tid] = k
    meta = {
        "version": 1,
        "horizon": HORIZON,
        "feature_order": list(FEATURE_NAMES),
        "turbines": counts,
        "assignment": {d.isoformat(): p for d, p in sorted(assignment.items())},
    }
    (out / "split.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_samples(prepared_dir) -> tuple[dict[str, list[ForecastSample]], dict[date, str]]:
    d = Path(prepared_dir)
    meta = json.loads((d / "split.json").read_text())
    if list(meta["feature_order"]) != list(FEATURE_NAMES):
        raise SplitError("prepared samples use a different feature order")
    out = {}
    for tid in sorted(meta["turbines"]):
        df = pd.read_csv(d / f"samples_{tid}.csv")
        k = len(df) // HORIZON
        X = df[list(FEATURE_NAMES)].to_numpy(dtype=float).reshape(k, HORIZON, N_FEATURES)
        Y = df["target_kw"].to_numpy(dtype=float).reshape(k, HORIZON)
        t0 = pd.to_datetime(df["t0"].to_numpy()[::HORIZON], utc=True).tz_convert(None).to_numpy().astype("datetime64[s]")
        out[tid] = [ForecastSample(tid, t0[i], X[i], Y[i]) for i in range(k)]
    assignment = {date.fromisoformat(k): v for k, v in meta["assignment"].items()}
    return out, assignment


def partition(samples, split: DatasetSplit, name: str) -> list[ForecastSample]:
    return [samples[i] for i in split.indices(name)]
