"""Reproducible synthetic wind farms with known NWP biases.

A site wind process (seasonal + diurnal sinusoids + AR(1) fluctuation)
drives every turbine's SCADA power through a power curve.  The NWP forecast
sees the same site wind plus injected biases and an issuance-specific noise
path, so every error pattern in the generated data has a known cause.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import ConfigError
from .ingest import adjust_hub_height, parse_timestamp, write_nwp, write_scada
from .powercurve import PowerCurve, default_curve, true_power


def _as_utc(ts) -> datetime:
    if isinstance(ts, str):
        return parse_timestamp(ts)
    if isinstance(ts, datetime):
        return ts.replace(tzinfo=timezone.utc) if ts.tzinfo is None else ts.astimezone(timezone.utc)
    return pd.Timestamp(ts).tz_localize("UTC").to_pydatetime()


@dataclass(frozen=True)
class FarmConfig:
    n_turbines: int = 2
    start_time: datetime = datetime(2021, 1, 1, tzinfo=timezone.utc)
    duration_days: int = 60
    nwp_interval_minutes: int = 15
    nwp_reissue_hours: int = 6
    nwp_lead_hours: int = 72
    scada_interval_minutes: int = 10
    hub_height_m: float = 120.0
    nwp_ref_height_m: float = 100.0
    capacity_kw: float = 2100.0
    rng_seed: int = 0
    # climate of the true wind process (at the NWP reference height)
    utc_offset_hours: float = 1.0
    mean_wind_ms: float = 7.5
    wind_std_ms: float = 2.5
    wind_corr_hours: float = 8.0
    seasonal_wind_amplitude_ms: float = 1.0
    diurnal_wind_amplitude_ms: float = 0.5
    wind_floor_ms: float = 0.0
    turbine_wind_std_ms: float = 0.3
    power_noise_kw: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "start_time", _as_utc(self.start_time))
        if self.n_turbines < 1:
            raise ConfigError("n_turbines must be >= 1")
        if self.duration_days < 1:
            raise ConfigError("duration_days must be >= 1")
        if self.hub_height_m <= 1 or self.nwp_ref_height_m <= 1:
            raise ConfigError("heights must exceed 1 m")
        if self.capacity_kw <= 0:
            raise ConfigError("capacity_kw must be positive")
        for name in ("nwp_interval_minutes", "nwp_reissue_hours", "nwp_lead_hours", "scada_interval_minutes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.nwp_lead_hours < 49:
            raise ConfigError("nwp_lead_hours must cover a 49-hour sample")
        if 60 % self.nwp_interval_minutes or 60 % self.scada_interval_minutes:
            raise ConfigError("sampling intervals must divide one hour")
        if min(self.wind_std_ms, self.turbine_wind_std_ms, self.power_noise_kw) < 0:
            raise ConfigError("noise levels must be non-negative")
        if self.wind_corr_hours <= 0:
            raise ConfigError("wind_corr_hours must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start_time"] = self.start_time.strftime("%Y-%m-%dT%H:%M:%SZ")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FarmConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown farm config key(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class BiasProfile:
    """Injected NWP wind-speed errors (m/s at the NWP reference height).

    The diurnal term is ``+amp * sin(2*pi*(local_hour - 6)/24)``: positive
    between 06 and 18 local time, negative at night.  The seasonal term is
    ``-amp * cos(2*pi*(doy - 15)/365.25)``: negative in winter, positive in
    summer.  The per-turbine offset shifts each turbine's true wind away from
    the shared forecast.
    """

    diurnal_amplitude_ms: float = 0.0
    seasonal_amplitude_ms: float = 0.0
    per_turbine_offset_std_ms: float = 0.0
    noise_std_ms: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BiasProfile":
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ConfigError(f"unknown bias key(s): {sorted(set(d) - known)}")
        return cls(**d)


@dataclass(frozen=True)
class RegimeShift:
    """Switch to another bias profile from ``start_day`` (days after farm start) on."""

    start_day: float
    bias: BiasProfile

    def to_dict(self) -> dict:
        return {"start_day": self.start_day, "bias": self.bias.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RegimeShift":
        return cls(float(d["start_day"]), BiasProfile.from_dict(d["bias"]))


@dataclass
class SyntheticDataset:
    config: FarmConfig
    scada: dict[str, pd.DataFrame]
    nwp: pd.DataFrame
    truth_curve: PowerCurve
    truth_bias: BiasProfile
    site_wind: pd.DataFrame
    turbine_offsets_z: dict[str, float] = field(default_factory=dict)
    shift: RegimeShift | None = None

    @property
    def turbine_ids(self) -> list[str]:
        return list(self.scada)


def turbine_id(j: int) -> str:
    return f"T{j + 1:02d}"


def _ar1(rng, n_series: int, n: int, std: float, phi: float) -> np.ndarray:
    e = rng.standard_normal((n_series, n))
    e[:, 1:] *= std * math.sqrt(1.0 - phi * phi)
    e[:, 0] *= std
    return lfilter([1.0], [1.0, -phi], e, axis=1)


def _local_hours(times: np.ndarray, offset_h: float) -> np.ndarray:
    sec = (times.astype("datetime64[s]").astype(np.int64) + int(round(offset_h * 3600))) % 86400
    return sec / 3600.0


def _day_of_year(times: np.ndarray, offset_h: float) -> np.ndarray:
    """Fractional day of year (1 = Jan 1 00:00 local)."""
    times = np.asarray(times, dtype="datetime64[s]")
    local = pd.DatetimeIndex(times.ravel()) + pd.Timedelta(hours=offset_h)
    doy = local.dayofyear + (local.hour + local.minute / 60.0) / 24.0
    return doy.to_numpy(dtype=float).reshape(times.shape)


def diurnal_term(local_hour, amplitude: float):
    return amplitude * np.sin(2 * np.pi * (np.asarray(local_hour, dtype=float) - 6.0) / 24.0)


def seasonal_term(day_of_year, amplitude: float):
    return -amplitude * np.cos(2 * np.pi * (np.asarray(day_of_year, dtype=float) - 15.0) / 365.25)


def injected_bias(times, bias: BiasProfile, utc_offset_hours: float) -> np.ndarray:
    """Deterministic part of the NWP wind error at the given UTC times."""
    times = np.asarray(times, dtype="datetime64[s]")
    return (diurnal_term(_local_hours(times, utc_offset_hours), bias.diurnal_amplitude_ms)
            + seasonal_term(_day_of_year(times, utc_offset_hours), bias.seasonal_amplitude_ms))


def _shift_time(start: datetime, shift: RegimeShift) -> np.datetime64:
    return np.datetime64(start.replace(tzinfo=None), "s") + np.timedelta64(int(round(shift.start_day * 86400)), "s")


def _profile_field(times, bias, shift, start, name):
    base = np.full(times.shape, getattr(bias, name), dtype=float)
    if shift is None:
        return base
    return np.where(times >= _shift_time(start, shift), getattr(shift.bias, name), base)


def generate_farm(
    config: FarmConfig,
    bias: BiasProfile,
    curve: PowerCurve | None = None,
    shift: RegimeShift | None = None,
) -> SyntheticDataset:
    """Generate SCADA series for every turbine plus one shared NWP series.

    Deterministic for a fixed ``config.rng_seed``.
    """
    if curve is None:
        curve = default_curve(config.capacity_kw)
    if curve.capacity_kw != config.capacity_kw:
        raise ConfigError("curve capacity differs from farm capacity")
    rng = np.random.default_rng(config.rng_seed)

    step = math.gcd(config.nwp_interval_minutes, config.scada_interval_minutes)
    start = np.datetime64(config.start_time.replace(tzinfo=None), "s")
    total_min = (config.duration_days * 24 + config.nwp_lead_hours + 1) * 60
    n = total_min // step
    grid = start + np.arange(n) * np.timedelta64(step * 60, "s")
    off = config.utc_offset_hours
    hours = _local_hours(grid, off)
    doy = _day_of_year(grid, off)

    phi = math.exp(-step / 60.0 / config.wind_corr_hours)
    ar = _ar1(rng, 1, n, config.wind_std_ms, phi)[0]
    site = (config.mean_wind_ms
            + config.seasonal_wind_amplitude_ms * np.cos(2 * np.pi * (doy - 15.0) / 365.25)
            + config.diurnal_wind_amplitude_ms * np.cos(2 * np.pi * (hours - 15.0) / 24.0)
            + ar)
    site = np.maximum(site, config.wind_floor_ms)
    site = np.maximum(site, 0.0)

    temp = (10.0 - 8.0 * np.cos(2 * np.pi * (doy - 15.0) / 365.25)
            + 4.0 * np.cos(2 * np.pi * (hours - 15.0) / 24.0)
            + _ar1(rng, 1, n, 2.0, math.exp(-step / 60.0 / 12.0))[0])
    wdir = np.mod(240.0 + _ar1(rng, 1, n, 60.0, math.exp(-step / 60.0 / 24.0))[0], 360.0)

    # SCADA
    n_scada = config.duration_days * 24 * 60 // config.scada_interval_minutes
    per = config.scada_interval_minutes // step
    scada_times = start + np.arange(n_scada) * np.timedelta64(config.scada_interval_minutes * 60, "s")
    offsets_z = rng.standard_normal(config.n_turbines)
    turb_ar = _ar1(rng, config.n_turbines, n_scada * per, config.turbine_wind_std_ms,
                   math.exp(-step / 60.0))
    offset_std = _profile_field(grid[: n_scada * per], bias, shift, config.start_time,
                                "per_turbine_offset_std_ms")
    scada = {}
    for j in range(config.n_turbines):
        tid = turbine_id(j)
        ref_ws = np.maximum(site[: n_scada * per] - offsets_z[j] * offset_std + turb_ar[j], 0.0)
        hub = adjust_hub_height(ref_ws, config.nwp_ref_height_m, config.hub_height_m)
        power = true_power(hub, curve).reshape(n_scada, per).mean(axis=1)
        power = power + rng.normal(0.0, config.power_noise_kw, n_scada) if config.power_noise_kw > 0 else power
        power = np.clip(power, 0.0, config.capacity_kw)
        d = wdir[: n_scada * per].reshape(n_scada, per)[:, 0]
        scada[tid] = pd.DataFrame({
            "turbine_id": tid,
            "timestamp": scada_times,
            "power_kw": power,
            "wind_speed_ms": hub.reshape(n_scada, per).mean(axis=1),
            "nacelle_dir_deg": np.mod(d + rng.normal(0.0, 5.0, n_scada), 360.0),
            "wind_dir_deg": d,
            "temp_c": temp[: n_scada * per].reshape(n_scada, per)[:, 0],
        })

    # NWP: one issuance every reissue hours inside the duration, full lead window each
    n_issue = math.ceil(config.duration_days * 24 / config.nwp_reissue_hours)
    n_lead = config.nwp_lead_hours * 60 // config.nwp_interval_minutes + 1
    issue_idx = np.arange(n_issue) * (config.nwp_reissue_hours * 60 // step)
    lead_idx = np.arange(n_lead) * (config.nwp_interval_minutes // step)
    gidx = issue_idx[:, None] + lead_idx[None, :]
    valid = grid[gidx]
    noise_std = _profile_field(valid, bias, shift, config.start_time, "noise_std_ms")
    noise = _ar1(rng, n_issue, n_lead, 1.0, math.exp(-config.nwp_interval_minutes / 60.0 / 3.0))
    err = injected_bias(valid, bias, off)
    if shift is not None:
        err = np.where(valid >= _shift_time(config.start_time, shift),
                       injected_bias(valid, shift.bias, off), err)
    err = err + noise_std * noise
    ws = np.maximum(site[gidx] + err, 0.0)
    elev = np.clip(np.sin(np.pi * (hours[gidx] - 6.0) / 12.0), 0.0, None)
    season = 0.6 - 0.4 * np.cos(2 * np.pi * (doy[gidx] - 15.0) / 365.25)
    nwp = pd.DataFrame({
        "issue_time": np.repeat(grid[issue_idx], n_lead),
        "valid_time": valid.ravel(),
        "wind_speed_ms": ws.ravel(),
        "wind_gust_ms": (ws * 1.3 + np.abs(rng.normal(0.0, 0.8, ws.shape))).ravel(),
        "temp_c": (temp[gidx] + rng.normal(0.0, 0.7, ws.shape)).ravel(),
        "wind_dir_deg": np.mod(wdir[gidx] + rng.normal(0.0, 8.0, ws.shape), 360.0).ravel(),
        "radiance_wm2": (900.0 * elev * season).ravel(),
        "precip_mm": (rng.exponential(1.0, ws.shape) * (rng.random(ws.shape) < 0.05)).ravel(),
    })
    site_df = pd.DataFrame({"time": grid, "wind_ms": site})
    return SyntheticDataset(
        config=config, scada=scada, nwp=nwp, truth_curve=curve, truth_bias=bias,
        site_wind=site_df,
        turbine_offsets_z={turbine_id(j): float(z) for j, z in enumerate(offsets_z)},
        shift=shift,
    )


def dataset_manifest(ds: SyntheticDataset) -> dict:
    return {
        "farm": ds.config.to_dict(),
        "bias": ds.truth_bias.to_dict(),
        "shift": ds.shift.to_dict() if ds.shift else None,
        "curve": ds.truth_curve.to_dict(),
        "rng_seed": ds.config.rng_seed,
        "turbines": ds.turbine_ids,
    }


def write_dataset(ds: SyntheticDataset, out_dir) -> list[Path]:
    """Write ``scada_<id>.csv`` per turbine and ``nwp.csv``; returns the paths.

    The sidecar manifest is left to the caller so that each output
    directory ends up with exactly one manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for tid, df in ds.scada.items():
        p = out / f"scada_{tid}.csv"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            write_scada(df, fh)
        paths.append(p)
    p = out / "nwp.csv"
    with open(p, "w", encoding="utf-8", newline="") as fh:
        write_nwp(ds.nwp, fh)
    paths.append(p)
    return paths


def load_generate_config(d: dict):
    """Split a generate-config mapping into (FarmConfig, BiasProfile, curve, shift)."""
    try:
        farm = FarmConfig.from_dict(d.get("farm", {}))
        bias = BiasProfile.from_dict(d.get("bias", {}))
        curve = PowerCurve.from_dict(d["curve"]) if d.get("curve") else None
        shift = RegimeShift.from_dict(d["shift"]) if d.get("shift") else None
    except (TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid generate config: {exc}") from exc
    return farm, bias, curve, shift
