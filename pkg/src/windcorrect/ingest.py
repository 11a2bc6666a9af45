"""SCADA/NWP file parsing and feature engineering.

File formats (UTF-8 delimited text, ISO-8601 UTC timestamps)::

    SCADA: turbine_id,timestamp,power_kw,wind_speed_ms,nacelle_dir_deg,wind_dir_deg,temp_c
    NWP:   issue_time,valid_time,wind_speed_ms,wind_gust_ms,temp_c,wind_dir_deg,radiance_wm2,precip_mm

Only the SCADA power is used as a target.  From the NWP forecasts the wind
speed (log-adjusted to hub height), gust, temperature and direction are kept,
plus cyclical hour/day-of-year encodings and the lead time.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import IO, Iterable

import numpy as np
import pandas as pd

from .errors import DomainError, FitError, RowError, SchemaError

log = logging.getLogger(__name__)

SCADA_COLUMNS = (
    "turbine_id", "timestamp", "power_kw", "wind_speed_ms",
    "nacelle_dir_deg", "wind_dir_deg", "temp_c",
)
NWP_COLUMNS = (
    "issue_time", "valid_time", "wind_speed_ms", "wind_gust_ms",
    "temp_c", "wind_dir_deg", "radiance_wm2", "precip_mm",
)
FEATURE_NAMES = (
    "nwp_ws_adj", "nwp_gust", "nwp_temp", "nwp_dir_sin", "nwp_dir_cos",
    "hour_sin", "hour_cos", "doy_sin", "doy_cos", "lead_time",
)
N_FEATURES = len(FEATURE_NAMES)
MAX_LEAD_MINUTES = 72 * 60
MAX_BAD_ROW_FRACTION = 0.10


@dataclass(frozen=True, slots=True)
class ScadaRecord:
    turbine_id: str
    timestamp: datetime
    power_kw: float
    wind_speed_ms: float
    nacelle_dir_deg: float
    wind_dir_deg: float
    temp_c: float


@dataclass(frozen=True, slots=True)
class NwpRecord:
    issue_time: datetime
    valid_time: datetime
    wind_speed_ms: float
    wind_gust_ms: float
    temp_c: float
    wind_dir_deg: float
    radiance: float
    precipitation: float

    @property
    def lead_minutes(self) -> float:
        return (self.valid_time - self.issue_time).total_seconds() / 60.0


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts) -> str:
    return pd.Timestamp(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


def _finite(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {text!r}")
    return v


def _read_rows(stream: IO[str], columns: tuple[str, ...]):
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty file: missing header") from None
    missing = [c for c in columns if c not in header]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    idx = [header.index(c) for c in columns]
    for row in reader:
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        yield reader.line_num, row, idx


def _check_bad_rows(kind: str, n_rows: int, bad: list[tuple[int, str]]):
    if not bad:
        return
    if len(bad) > MAX_BAD_ROW_FRACTION * n_rows:
        raise RowError(
            f"{kind}: {len(bad)} of {n_rows} rows malformed "
            f"(limit {MAX_BAD_ROW_FRACTION:.0%}); first offenders: "
            + "; ".join(f"line {ln}: {msg}" for ln, msg in bad[:20]),
            offenders=bad[:20],
        )
    for ln, msg in bad:
        log.warning("%s line %d skipped: %s", kind, ln, msg)


def parse_scada(stream: IO[str]) -> list[ScadaRecord]:
    """Parse a SCADA file into records sorted by (turbine_id, timestamp).

    Malformed rows are collected with their line numbers and skipped; if
    more than 10% of the rows are bad a :class:`RowError` listing the first
    20 offenders is raised instead.
    """
    records, bad, n = [], [], 0
    for line, row, idx in _read_rows(stream, SCADA_COLUMNS):
        n += 1
        try:
            f = [row[i] for i in idx]
            tid = f[0].strip()
            if not tid:
                raise ValueError("empty turbine_id")
            records.append(ScadaRecord(
                tid, parse_timestamp(f[1]), _finite(f[2]), _finite(f[3]),
                _finite(f[4]), _finite(f[5]), _finite(f[6]),
            ))
        except (ValueError, IndexError) as exc:
            bad.append((line, str(exc) or type(exc).__name__))
    records.sort(key=lambda r: (r.turbine_id, r.timestamp))
    kept = []
    for r in records:
        if kept and kept[-1].turbine_id == r.turbine_id and kept[-1].timestamp == r.timestamp:
            bad.append((0, f"duplicate timestamp {format_timestamp(r.timestamp)} for {r.turbine_id}"))
            continue
        kept.append(r)
    _check_bad_rows("scada", n, bad)
    return kept


def parse_nwp(stream: IO[str]) -> list[NwpRecord]:
    """Parse an NWP file into records sorted by (issue_time, valid_time)."""
    records, bad, n = [], [], 0
    for line, row, idx in _read_rows(stream, NWP_COLUMNS):
        n += 1
        try:
            f = [row[i] for i in idx]
            rec = NwpRecord(
                parse_timestamp(f[0]), parse_timestamp(f[1]), _finite(f[2]), _finite(f[3]),
                _finite(f[4]), _finite(f[5]), _finite(f[6]), _finite(f[7]),
            )
            if not 0 <= rec.lead_minutes <= MAX_LEAD_MINUTES:
                raise ValueError(f"lead time {rec.lead_minutes} min outside [0, {MAX_LEAD_MINUTES}]")
            records.append(rec)
        except (ValueError, IndexError) as exc:
            bad.append((line, str(exc) or type(exc).__name__))
    _check_bad_rows("nwp", n, bad)
    records.sort(key=lambda r: (r.issue_time, r.valid_time))
    return records


def _utc_naive(values) -> np.ndarray:
    idx = pd.DatetimeIndex(pd.to_datetime(list(values), utc=True))
    return idx.tz_convert(None).values.astype("datetime64[s]")


def scada_frame(records: Iterable[ScadaRecord]) -> pd.DataFrame:
    """Columnar view of SCADA records; timestamps become naive-UTC datetime64."""
    records = list(records)
    df = pd.DataFrame(
        [(r.turbine_id, r.power_kw, r.wind_speed_ms, r.nacelle_dir_deg, r.wind_dir_deg, r.temp_c)
         for r in records],
        columns=["turbine_id", "power_kw", "wind_speed_ms", "nacelle_dir_deg", "wind_dir_deg", "temp_c"],
    )
    df.insert(1, "timestamp", _utc_naive([r.timestamp for r in records]) if records
              else np.array([], dtype="datetime64[s]"))
    return df


def nwp_frame(records: Iterable[NwpRecord]) -> pd.DataFrame:
    records = list(records)
    df = pd.DataFrame(
        [(r.wind_speed_ms, r.wind_gust_ms, r.temp_c, r.wind_dir_deg, r.radiance, r.precipitation)
         for r in records],
        columns=list(NWP_COLUMNS[2:]),
    )
    empty = np.array([], dtype="datetime64[s]")
    df.insert(0, "issue_time", _utc_naive([r.issue_time for r in records]) if records else empty)
    df.insert(1, "valid_time", _utc_naive([r.valid_time for r in records]) if records else empty)
    return df


def read_scada_csv(path) -> pd.DataFrame:
    with open(path, encoding="utf-8", newline="") as fh:
        return scada_frame(parse_scada(fh))


def read_nwp_csv(path) -> pd.DataFrame:
    with open(path, encoding="utf-8", newline="") as fh:
        return nwp_frame(parse_nwp(fh))


def _write_frame(df: pd.DataFrame, columns, time_cols, stream, float_format):
    out = df.loc[:, list(columns)].copy()
    for c in time_cols:
        out[c] = pd.to_datetime(out[c]).dt.strftime("%Y-%m-%dT%H:%M:%SZ")
    out.to_csv(stream, index=False, float_format=float_format, lineterminator="\n")


def write_scada(df: pd.DataFrame, stream, float_format="%.4f"):
    _write_frame(df, SCADA_COLUMNS, ("timestamp",), stream, float_format)


def write_nwp(df: pd.DataFrame, stream, float_format="%.4f"):
    _write_frame(df, NWP_COLUMNS, ("issue_time", "valid_time"), stream, float_format)


def adjust_hub_height(ws, h_nwp: float, h_hub: float):
    """Log-scale a wind speed from the NWP reference height to hub height.

    Returns ``ws * ln(h_hub) / ln(h_nwp)``; the log base cancels in the ratio.
    """
    if h_nwp <= 1 or h_hub <= 1:
        raise DomainError("heights must exceed 1 m for the log adjustment")
    arr = np.asarray(ws, dtype=float)
    if np.any(arr < 0):
        raise DomainError("wind speed must be non-negative")
    out = arr * (math.log(h_hub) / math.log(h_nwp))
    return float(out) if np.ndim(ws) == 0 else out


def encode_arrays(
    hub_ws, gust, temp, dir_deg, valid_time, lead_hours, local_tz_offset: float = 0.0
) -> np.ndarray:
    """Vectorised feature encoding; returns an ``(..., 10)`` array (un-normalised)."""
    t = pd.DatetimeIndex(np.asarray(valid_time, dtype="datetime64[s]").ravel()) \
        + pd.Timedelta(hours=local_tz_offset)
    shape = np.shape(hub_ws)
    hour = (t.hour + t.minute / 60.0 + t.second / 3600.0).to_numpy().reshape(shape)
    doy = t.dayofyear.to_numpy().reshape(shape)
    theta = np.deg2rad(np.asarray(dir_deg, dtype=float))
    hour_angle = 2 * np.pi * hour / 24.0
    doy_angle = 2 * np.pi * (doy - 1) / 365.25
    return np.stack([
        np.asarray(hub_ws, dtype=float),
        np.asarray(gust, dtype=float),
        np.asarray(temp, dtype=float),
        np.sin(theta), np.cos(theta),
        np.sin(hour_angle), np.cos(hour_angle),
        np.sin(doy_angle), np.cos(doy_angle),
        np.asarray(lead_hours, dtype=float),
    ], axis=-1)


def encode_features(rec: NwpRecord, hub_adjusted_ws: float, local_tz_offset: float = 0.0) -> np.ndarray:
    """Encode one NWP record into the 10 predictor values (before scaling)."""
    return encode_arrays(
        np.array([hub_adjusted_ws]), np.array([rec.wind_gust_ms]), np.array([rec.temp_c]),
        np.array([rec.wind_dir_deg]), _utc_naive([rec.valid_time]),
        np.array([rec.lead_minutes / 60.0]), local_tz_offset,
    )[0]


@dataclass(frozen=True)
class Normalizer:
    """Per-feature min/max scaling to [0, 1] plus power scaling by capacity.

    Constant features (max == min) map to 0.5.  Inputs outside the fitted
    range saturate at 0 or 1.
    """

    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    capacity_kw: float
    feature_names: tuple[str, ...] = FEATURE_NAMES

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.mins, dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.maxs, dtype=float)

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": n, "min": float.hex(float(a)), "max": float.hex(float(b))}
                for n, a, b in zip(self.feature_names, self.mins, self.maxs)
            ],
            "capacity_kw": float.hex(float(self.capacity_kw)),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        feats = d["features"]
        return cls(
            mins=tuple(float.fromhex(f["min"]) for f in feats),
            maxs=tuple(float.fromhex(f["max"]) for f in feats),
            capacity_kw=float.fromhex(d["capacity_kw"]),
            feature_names=tuple(f["name"] for f in feats),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def fit_normalizer(train_features, capacity_kw: float) -> Normalizer:
    """Fit min/max per feature over the training rows only.

    ``train_features`` may be ``(n, 10)`` rows or ``(k, 49, 10)`` samples.
    """
    x = np.asarray(train_features, dtype=float)
    if x.size == 0:
        raise FitError("cannot fit a normalizer on an empty training set")
    x = x.reshape(-1, x.shape[-1])
    if capacity_kw <= 0:
        raise FitError("capacity_kw must be positive")
    names = FEATURE_NAMES if x.shape[1] == N_FEATURES else tuple(f"f{i}" for i in range(x.shape[1]))
    return Normalizer(tuple(x.min(axis=0)), tuple(x.max(axis=0)), float(capacity_kw), names)


def apply_normalizer(n: Normalizer, fv) -> np.ndarray:
    x = np.asarray(fv, dtype=float)
    lo, hi = n.lo, n.hi
    span = hi - lo
    varying = span > 0
    safe = np.where(varying, span, 1.0)
    out = np.where(varying, (x - lo) / safe, 0.5)
    return np.clip(out, 0.0, 1.0)


def invert_normalizer(n: Normalizer, z) -> np.ndarray:
    """Map scaled features back to physical units (constant features return their value)."""
    z = np.asarray(z, dtype=float)
    return n.lo + z * (n.hi - n.lo)


def normalize_power(n: Normalizer, power_kw) -> np.ndarray:
    return np.asarray(power_kw, dtype=float) / n.capacity_kw


def denormalize_power(n: Normalizer, y):
    out = np.clip(np.asarray(y, dtype=float) * n.capacity_kw, 0.0, n.capacity_kw)
    return float(out) if np.ndim(y) == 0 else out
