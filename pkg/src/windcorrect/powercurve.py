"""Tabulated wind-speed to power mapping.

The same curve type serves two roles: it is the uncorrected baseline
forecaster, and the synthetic generator uses it as the ground truth that
turns true wind into SCADA power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class PowerCurve:
    """Piecewise-linear power curve.

    ``ws_knots`` must be strictly increasing and ``power_knots`` monotone
    non-decreasing.  Outside the knot range the curve is flat at the end
    values, and at or above ``cut_out_ms`` the turbine produces nothing.
    """

    ws_knots: tuple[float, ...]
    power_knots: tuple[float, ...]
    capacity_kw: float
    cut_out_ms: float = np.inf

    def __post_init__(self):
        ws = np.asarray(self.ws_knots, dtype=float)
        pw = np.asarray(self.power_knots, dtype=float)
        if ws.ndim != 1 or ws.shape != pw.shape or ws.size < 2:
            raise ConfigError("power curve needs matching 1-D knot arrays with >= 2 knots")
        if np.any(np.diff(ws) <= 0):
            raise ConfigError("power curve wind-speed knots must be strictly increasing")
        if np.any(np.diff(pw) < 0):
            raise ConfigError("power curve power knots must be non-decreasing")
        if self.capacity_kw <= 0:
            raise ConfigError("capacity_kw must be positive")
        if pw.min() < 0 or pw.max() > self.capacity_kw:
            raise ConfigError("power knots must lie in [0, capacity_kw]")

    def __call__(self, ws):
        return true_power(ws, self)

    def to_dict(self) -> dict:
        return {
            "ws_knots": list(map(float, self.ws_knots)),
            "power_knots": list(map(float, self.power_knots)),
            "capacity_kw": float(self.capacity_kw),
            "cut_out_ms": None if np.isinf(self.cut_out_ms) else float(self.cut_out_ms),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PowerCurve":
        cut = d.get("cut_out_ms")
        return cls(
            ws_knots=tuple(float(v) for v in d["ws_knots"]),
            power_knots=tuple(float(v) for v in d["power_knots"]),
            capacity_kw=float(d["capacity_kw"]),
            cut_out_ms=np.inf if cut is None else float(cut),
        )


def default_curve(
    capacity_kw: float = 2100.0,
    cut_in_ms: float = 3.0,
    rated_ms: float = 12.0,
    cut_out_ms: float = 25.0,
    step_ms: float = 0.5,
) -> PowerCurve:
    """Synthetic curve: zero below cut-in, cubic ramp to rated, flat to cut-out."""
    ws = np.round(np.arange(0.0, cut_out_ms + step_ms / 2, step_ms), 10)
    ramp = (ws**3 - cut_in_ms**3) / (rated_ms**3 - cut_in_ms**3)
    power = capacity_kw * np.clip(ramp, 0.0, 1.0)
    return PowerCurve(tuple(ws), tuple(power), capacity_kw, cut_out_ms)


def true_power(ws, curve: PowerCurve):
    """Map wind speed (m/s) to power (kW) by linear interpolation of the knots.

    Accepts scalars or arrays; returns the same shape.  Negative speeds
    raise :class:`DomainError`.
    """
    arr = np.asarray(ws, dtype=float)
    if np.any(arr < 0):
        raise DomainError("wind speed must be non-negative")
    if np.any(np.isnan(arr)):
        raise DomainError("wind speed must not be NaN")
    power = np.interp(arr, curve.ws_knots, curve.power_knots)
    power = np.where(arr >= curve.cut_out_ms, 0.0, power)
    power = np.clip(power, 0.0, curve.capacity_kw)
    if np.ndim(ws) == 0:
        return float(power)
    return power
