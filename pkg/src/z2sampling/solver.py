"""Affine one-step solver pair: denoising map and its exact inversion.

Every supported geometry advances a latent with the same affine shape,

    denoise  t -> t-1 :  Phi(x; p) = A_t x + B_t p
    invert   t-1 -> t :  Psi(x; p) = Ainv_t x + C_t p

where p is the model prediction in the geometry's native parameterization
(eps for vp, velocity for flow/spherical).  Per-kind coefficients:

    vp          A_t = sqrt(ab_{t-1}/ab_t)
                B_t = sqrt(1-ab_{t-1}) - A_t sqrt(1-ab_t)
                C_t = sqrt(1-ab_t) - sqrt(ab_t/ab_{t-1}) sqrt(1-ab_{t-1})
    flow        A_t = 1,  B_t = sigma_{t-1} - sigma_t,  C_t = sigma_t - sigma_{t-1}
    spherical   dtheta = theta_{t-1} - theta_t
                A_t = cos(dtheta),  B_t = sin(dtheta),  C_t = -tan(dtheta)

C is always computed from the explicit inversion formula (time indices
swapped), never derived from B, so the dualities

    Ainv_t B_t = -C_t        A_t C_t = -B_t

remain a falsifiable cross-check instead of a tautology.  They are what later
collapses a forward/inverse/forward zigzag into a single translation, so
check_duality reports raw residuals and leaves the tolerance to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule, ScheduleKind

__all__ = [
    "SolverCoefficients",
    "LatentState",
    "coefficients",
    "coefficient_arrays",
    "forward_step",
    "inverse_step",
    "check_duality",
    "schedule_duality_residuals",
]


@dataclass(frozen=True)
class SolverCoefficients:
    """Affine coefficients of the transition t -> t-1 (and its inversion)."""

    a: float
    b: float
    a_inv: float
    c: float
    t: int


@dataclass(frozen=True)
class LatentState:
    """Latent vector pinned to the step index it lives at."""

    x: np.ndarray
    t: int

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("latent state must be a 1-d vector")
        x = x.copy()
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        if self.t < 0:
            raise ValueError("step index must be >= 0")


def coefficient_arrays(s: Schedule) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized (A, B, Ainv, C), index i holding the transition t=i+1 -> i."""
    lo = s.values[:-1]  # level at t-1
    hi = s.values[1:]   # level at t
    if s.kind is ScheduleKind.VP:
        a = np.sqrt(lo / hi)
        b = np.sqrt(1.0 - lo) - a * np.sqrt(1.0 - hi)
        a_inv = np.sqrt(hi / lo)
        c = np.sqrt(1.0 - hi) - a_inv * np.sqrt(1.0 - lo)
    elif s.kind is ScheduleKind.FLOW:
        a = np.ones_like(lo)
        b = lo - hi
        a_inv = np.ones_like(lo)
        c = hi - lo
    else:
        dtheta = lo - hi
        a = np.cos(dtheta)
        b = np.sin(dtheta)
        a_inv = 1.0 / np.cos(dtheta)
        c = -np.tan(dtheta)
    return a, b, a_inv, c


def coefficients(s: Schedule, t: int) -> SolverCoefficients:
    """Coefficients of the transition t -> t-1 for 1 <= t <= T."""
    if not 1 <= t <= s.T:
        raise ValueError(f"transition index {t} outside 1..{s.T}")
    a, b, a_inv, c = (arr[t - 1] for arr in coefficient_arrays(s))
    return SolverCoefficients(float(a), float(b), float(a_inv), float(c), t)


def forward_step(c: SolverCoefficients, state: LatentState, pred: np.ndarray) -> LatentState:
    """Denoise one step: state at t plus prediction -> state at t-1."""
    if state.t != c.t:
        raise ValueError(f"state at step {state.t} but coefficients for transition {c.t}")
    return LatentState(c.a * state.x + c.b * np.asarray(pred, dtype=np.float64), c.t - 1)


def inverse_step(c: SolverCoefficients, state: LatentState, pred: np.ndarray) -> LatentState:
    """Re-noise one step: state at t-1 plus prediction -> state at t."""
    if state.t != c.t - 1:
        raise ValueError(f"state at step {state.t} but inversion targets step {c.t}")
    return LatentState(c.a_inv * state.x + c.c * np.asarray(pred, dtype=np.float64), c.t)


def check_duality(c: SolverCoefficients) -> tuple[float, float]:
    """Residuals (|Ainv*B + C|, |A*C + B|) of the two exact dualities."""
    return abs(c.a_inv * c.b + c.c), abs(c.a * c.c + c.b)


def schedule_duality_residuals(s: Schedule) -> np.ndarray:
    """Both duality residuals for every transition; shape (T, 2)."""
    a, b, a_inv, c = coefficient_arrays(s)
    return np.stack([np.abs(a_inv * b + c), np.abs(a * c + b)], axis=1)
