"""Discrete noise schedules for the three solver geometries.

A schedule assigns one scalar noise level to every step index t = 0..T, where
t = T is the pure-noise end and t = 0 is the data end.  What the scalar means
depends on the geometry:

    vp          cumulative signal fraction alpha_bar_t, strictly increasing
                toward t = 0 with 0 < alpha_bar_T and alpha_bar_0 <= 1
    flow        interpolation level sigma_t, strictly decreasing toward t = 0
                with sigma_0 >= 0
    spherical   angle theta_t = arccos(sqrt(alpha_bar_t)), strictly decreasing
                toward t = 0, theta_t in [0, pi/2)

All three induce the same marginal structure: a latent at step t is
a_t * x0 + b_t * eps with per-kind scales

    vp          a = sqrt(alpha_bar_t),  b = sqrt(1 - alpha_bar_t)
    flow        a = 1 - sigma_t,        b = sigma_t
    spherical   a = cos(theta_t),       b = sin(theta_t)

Constructors validate monotonicity and range strictly; a degenerate schedule
(equal adjacent levels after float rounding) is rejected rather than patched.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "ScheduleKind",
    "Schedule",
    "make_linear_vp",
    "make_linear_flow",
    "vp_to_spherical",
]


class ScheduleKind(str, Enum):
    VP = "vp"
    FLOW = "flow"
    SPHERICAL = "spherical"


@dataclass(frozen=True)
class Schedule:
    """Validated noise schedule: ``values[t]`` is the level at step t.

    Args:
        kind: geometry the levels belong to.
        values: length T+1 array ordered from t = 0 (data) to t = T (noise).
    """

    kind: ScheduleKind
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("schedule values must be a 1-d array")
        if values.shape[0] < 2:
            raise ValueError("schedule needs at least one transition (T >= 1)")
        if not np.all(np.isfinite(values)):
            raise ValueError("schedule values must be finite")
        kind = ScheduleKind(self.kind)
        _validate_levels(kind, values)
        values.flags.writeable = False
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0] - 1

    def level(self, t: int) -> float:
        """Noise level at step t (0 <= t <= T)."""
        if not 0 <= t <= self.T:
            raise ValueError(f"step {t} outside 0..{self.T}")
        return float(self.values[t])

    def marginal_scales(self, t: int) -> tuple[float, float]:
        """Signal/noise scales (a_t, b_t) of the marginal at step t."""
        v = self.level(t)
        if self.kind is ScheduleKind.VP:
            return float(np.sqrt(v)), float(np.sqrt(1.0 - v))
        if self.kind is ScheduleKind.FLOW:
            return 1.0 - v, v
        return float(np.cos(v)), float(np.sin(v))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "values": [float(v) for v in self.values]}

    @staticmethod
    def from_dict(payload: dict) -> "Schedule":
        return Schedule(ScheduleKind(payload["kind"]), np.asarray(payload["values"], dtype=np.float64))


def _validate_levels(kind: ScheduleKind, values: np.ndarray) -> None:
    diffs = np.diff(values)
    if kind is ScheduleKind.VP:
        # alpha_bar decreases strictly with t: noisier steps carry less signal.
        if not np.all(diffs < 0.0):
            raise ValueError("vp schedule requires strictly decreasing alpha_bar in t")
        if values[0] > 1.0 or values[-1] <= 0.0:
            raise ValueError("vp schedule requires 0 < alpha_bar_T and alpha_bar_0 <= 1")
    elif kind is ScheduleKind.FLOW:
        if not np.all(diffs > 0.0):
            raise ValueError("flow schedule requires strictly increasing sigma in t")
        if values[0] < 0.0:
            raise ValueError("flow schedule requires sigma_0 >= 0")
    else:
        if not np.all(diffs > 0.0):
            raise ValueError("spherical schedule requires theta strictly decreasing toward t=0")
        if values[0] < 0.0 or values[-1] >= np.pi / 2.0:
            raise ValueError("spherical schedule requires theta in [0, pi/2)")


def make_linear_vp(T: int, alpha_bar_start: float, alpha_bar_end: float) -> Schedule:
    """Geometric interpolation of alpha_bar from t=0 (start) to t=T (end).

    Geometric rather than arithmetic spacing keeps the per-step ratio
    alpha_bar_t / alpha_bar_{t-1} constant, so solver coefficients stay
    uniformly conditioned across the whole schedule.

    Args:
        T: number of transitions.
        alpha_bar_start: level at the data end t=0, in (0, 1].
        alpha_bar_end: level at the noise end t=T, in (0, alpha_bar_start).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < alpha_bar_end < alpha_bar_start <= 1.0):
        raise ValueError("need 0 < alpha_bar_end < alpha_bar_start <= 1")
    grid = np.arange(T + 1, dtype=np.float64) / T
    values = alpha_bar_start * (alpha_bar_end / alpha_bar_start) ** grid
    return Schedule(ScheduleKind.VP, values)


def make_linear_flow(T: int, sigma_max: float) -> Schedule:
    """Linear sigma grid sigma_t = sigma_max * t / T (sigma_0 = 0)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if sigma_max <= 0.0:
        raise ValueError("sigma_max must be positive")
    values = sigma_max * np.arange(T + 1, dtype=np.float64) / T
    return Schedule(ScheduleKind.FLOW, values)


def vp_to_spherical(s: Schedule) -> Schedule:
    """Map a vp schedule to angles theta_t = arccos(sqrt(alpha_bar_t))."""
    if s.kind is not ScheduleKind.VP:
        raise ValueError("vp_to_spherical expects a vp schedule")
    values = np.arccos(np.sqrt(s.values))
    return Schedule(ScheduleKind.SPHERICAL, values)
