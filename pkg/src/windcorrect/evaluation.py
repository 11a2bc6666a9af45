"""Forecast error metrics and analysis tables.

Metrics nest the way the per-sample evaluation defines them: mean bias,
MAE and RMSE are first computed over the T hourly steps of each forecast
sample, then averaged with equal weight over the K samples.  NRMSE is the
averaged RMSE in percent of installed capacity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .errors import InputError, IntegrityError


@dataclass
class MetricsReport:
    mb_k: np.ndarray
    mae_k: np.ndarray
    rmse_k: np.ndarray
    capacity_kw: float

    @property
    def k(self) -> int:
        return len(self.rmse_k)

    @property
    def mb(self) -> float:
        return float(np.mean(self.mb_k))

    @property
    def mae(self) -> float:
        return float(np.mean(self.mae_k))

    @property
    def rmse(self) -> float:
        return float(np.mean(self.rmse_k))

    @property
    def nrmse(self) -> float:
        return self.rmse * 100.0 / self.capacity_kw

    @property
    def rmse_k_std(self) -> float:
        """Within-turbine spread of the per-sample RMSE (extra column)."""
        return float(np.std(self.rmse_k))

    def summary(self) -> dict:
        return {"k": self.k, "mb": self.mb, "mae": self.mae, "rmse": self.rmse,
                "nrmse": self.nrmse, "rmse_k_std": self.rmse_k_std}


def compute_metrics(preds, truth, capacity_kw: float) -> MetricsReport:
    """Per-sample then per-set MB / MAE / RMSE / NRMSE for ``(K, T)`` arrays in kW.

    Bias is prediction minus observation.
    """
    p = np.asarray(preds, dtype=float)
    y = np.asarray(truth, dtype=float)
    if p.shape != y.shape:
        raise InputError(f"prediction shape {p.shape} differs from truth shape {y.shape}")
    if p.ndim == 1:
        p, y = p[None], y[None]
    if p.ndim != 2 or p.shape[0] < 1:
        raise InputError("need at least one (K, T) sample")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(y))):
        raise InputError("non-finite predictions or observations")
    if capacity_kw <= 0:
        raise InputError("capacity must be positive")
    err = p - y
    return MetricsReport(
        mb_k=err.mean(axis=1),
        mae_k=np.abs(err).mean(axis=1),
        rmse_k=np.sqrt((err * err).mean(axis=1)),
        capacity_kw=float(capacity_kw),
    )


DIMENSIONS = ("month", "hour", "turbine_hour")


@dataclass
class BiasTable:
    dimension: str
    rows: pd.DataFrame  # long format: <bin columns>, n, mean_bias, std
    empty_bins: list = field(default_factory=list)

    def mean_by_bin(self) -> dict:
        keys = [c for c in self.rows.columns if c not in ("n", "mean_bias", "std")]
        if len(keys) == 1:
            return dict(zip(self.rows[keys[0]], self.rows["mean_bias"]))
        return {tuple(r[keys]): r["mean_bias"] for _, r in self.rows.iterrows()}


def bias_table(preds, truth, timestamps, dimension: str, tz_offset: float = 0.0, turbine_ids=None) -> BiasTable:
    """Mean power bias per calendar month, local hour, or (turbine, local hour).

    ``timestamps`` are UTC and aligned element-wise with ``preds``.  Bins
    without data are left out of ``rows`` and listed in ``empty_bins``.
    """
    if dimension not in DIMENSIONS:
        raise InputError(f"dimension must be one of {DIMENSIONS}")
    err = (np.asarray(preds, dtype=float) - np.asarray(truth, dtype=float)).ravel()
    t = pd.DatetimeIndex(np.asarray(timestamps, dtype="datetime64[s]").ravel()) + pd.Timedelta(hours=tz_offset)
    if len(t) != len(err):
        raise InputError("timestamps are not aligned with predictions")
    df = pd.DataFrame({"bias": err})
    if dimension == "month":
        df["month"] = t.month
        keys, universe = ["month"], [(m,) for m in range(1, 13)]
    else:
        df["hour"] = t.hour
        keys, universe = ["hour"], [(h,) for h in range(24)]
        if dimension == "turbine_hour":
            if turbine_ids is None:
                raise InputError("turbine_hour tables need turbine_ids")
            tids = np.broadcast_to(np.asarray(turbine_ids, dtype=object).reshape(
                np.shape(turbine_ids) + (1,) * (np.ndim(preds) - np.ndim(turbine_ids))), np.shape(preds)).ravel()
            df["turbine_id"] = tids
            keys = ["turbine_id", "hour"]
            universe = [(tid, h) for tid in sorted(set(tids)) for h in range(24)]
    g = df.groupby(keys, sort=True)["bias"]
    rows = pd.DataFrame({"n": g.size(), "mean_bias": g.mean(), "std": g.std(ddof=1).fillna(0.0)}).reset_index()
    present = set(map(tuple, rows[keys].itertuples(index=False, name=None)))
    empty = [u if len(u) > 1 else u[0] for u in universe if u not in present]
    return BiasTable(dimension, rows, empty)


def compare_models(reports: dict[str, MetricsReport], baseline: MetricsReport) -> pd.DataFrame:
    """MAE/RMSE in percent of the baseline and rank by lowest RMSE (ties share the lower rank)."""
    if not reports:
        raise InputError("no model reports to compare")
    for name, r in reports.items():
        if r.k != baseline.k:
            raise IntegrityError(f"{name}: K={r.k} differs from baseline K={baseline.k}")
    names = list(reports)
    rmse = np.array([reports[n].rmse for n in names])
    return pd.DataFrame({
        "model": names,
        "mae_pct_of_baseline": [reports[n].mae / baseline.mae * 100.0 for n in names],
        "rmse_pct_of_baseline": rmse / baseline.rmse * 100.0,
        "rank": rankdata(rmse, method="min").astype(int),
    })


def summarize_turbines(per_turbine: dict[str, dict[str, MetricsReport]]) -> pd.DataFrame:
    """Per-model mean and (population) standard deviation across turbines."""
    records = []
    for tid, reports in per_turbine.items():
        for model, r in reports.items():
            records.append({"turbine_id": tid, "model": model, **r.summary()})
    df = pd.DataFrame(records)
    agg = df.groupby("model", sort=False)[["mb", "mae", "rmse", "nrmse"]].agg(["mean", lambda s: s.std(ddof=0)])
    agg.columns = [f"{m}_{'mean' if s == 'mean' else 'std'}" for m, s in agg.columns]
    return agg.reset_index()


def summarize_relative(comparisons: dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Average the per-turbine :func:`compare_models` tables."""
    df = pd.concat([c.assign(turbine_id=tid) for tid, c in comparisons.items()], ignore_index=True)
    cols = ["mae_pct_of_baseline", "rmse_pct_of_baseline", "rank"]
    agg = df.groupby("model", sort=False)[cols].agg(["mean", lambda s: s.std(ddof=0)])
    agg.columns = [f"{m}_{'mean' if s == 'mean' else 'std'}" for m, s in agg.columns]
    return agg.reset_index()
