"""Analytic Gaussian-mixture score fields with classifier-free guidance.

Data densities are isotropic Gaussian mixtures, so every diffused marginal is
available in closed form: with signal/noise scales (a_t, b_t) from the
schedule, component i of the data mixture becomes

    N( a_t * mu_i,  (a_t^2 s_i^2 + b_t^2) * I )

and the minimum-MSE noise prediction is Tweedie's identity

    eps*(x, t) = -b_t * grad log p_t(x) = E[eps | x_t = x].

Everything downstream (guidance deltas, Jacobians, velocity forms) derives
from these closed forms, which is what makes solver-level identities testable
to near machine precision instead of against a trained network.

Guidance follows the usual two-field recipe: a conditional and an
unconditional mixture are evaluated at the same point and combined as
uncond + gamma * (cond - uncond).

Parameterizations: vp solvers consume eps directly; flow and spherical
solvers consume the native velocity.  The guided-prediction helpers return
whatever the schedule's solver consumes, and the conversion helpers implement
the exact algebraic identities between the two forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule, ScheduleKind

__all__ = [
    "GaussianMixture",
    "FieldPair",
    "GuidedPrediction",
    "exact_epsilon",
    "epsilon_jacobian",
    "epsilon_to_velocity",
    "velocity_to_epsilon",
    "native_prediction",
    "native_jacobian",
    "guided_prediction",
]


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture sum_i w_i N(mu_i, s_i^2 I).

    Args:
        means: component means, shape (n, d).
        variances: per-component isotropic variances s_i^2, shape (n,).
        weights: positive mixture weights, shape (n,); normalized to sum 1.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        variances = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        n = means.shape[0]
        if variances.shape[0] != n or weights.shape[0] != n:
            raise ValueError("means, variances, weights must agree on component count")
        if not np.all(variances > 0.0):
            raise ValueError("component variances must be positive")
        if not np.all(weights > 0.0):
            raise ValueError("component weights must be positive")
        weights = weights / weights.sum()
        for arr in (means, variances, weights):
            arr.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _marginal(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        """Means and variances of the diffused mixture at scales (a, b)."""
        return a * self.means, a * a * self.variances + b * b

    def _log_component_weights(self, x: np.ndarray, a: float, b: float) -> np.ndarray:
        m, v = self._marginal(a, b)
        diff = x[None, :] - m
        sq = np.einsum("nd,nd->n", diff, diff)
        d = self.dim
        return np.log(self.weights) - 0.5 * d * np.log(2.0 * np.pi * v) - 0.5 * sq / v

    def log_density(self, x: np.ndarray, a: float, b: float) -> float:
        """log p(x) of the diffused mixture; (a, b) = (1, 0) gives the data density."""
        logits = self._log_component_weights(np.asarray(x, dtype=np.float64), a, b)
        peak = logits.max()  # max-subtraction keeps the exp in range
        return float(peak + np.log(np.exp(logits - peak).sum()))

    def posterior_weights(self, x: np.ndarray, a: float, b: float) -> np.ndarray:
        logits = self._log_component_weights(np.asarray(x, dtype=np.float64), a, b)
        logits -= logits.max()
        r = np.exp(logits)
        return r / r.sum()

    def score(self, x: np.ndarray, a: float, b: float) -> np.ndarray:
        """grad_x log p(x) of the diffused mixture."""
        x = np.asarray(x, dtype=np.float64)
        m, v = self._marginal(a, b)
        r = self.posterior_weights(x, a, b)
        u = -(x[None, :] - m) / v[:, None]
        return r @ u

    def epsilon(self, x: np.ndarray, a: float, b: float) -> np.ndarray:
        """Exact noise prediction E[eps | x] = -b * score."""
        return -b * self.score(x, a, b)

    def epsilon_jacobian(self, x: np.ndarray, a: float, b: float) -> np.ndarray:
        """Exact Jacobian d eps* / d x = -b * hessian(log p)."""
        x = np.asarray(x, dtype=np.float64)
        m, v = self._marginal(a, b)
        r = self.posterior_weights(x, a, b)
        u = -(x[None, :] - m) / v[:, None]
        mean_u = r @ u
        hess = np.einsum("n,nd,ne->de", r, u, u) - np.outer(mean_u, mean_u)
        hess -= float((r / v).sum()) * np.eye(self.dim)
        return -b * hess

    def x0_mean(self, x: np.ndarray, a: float, b: float) -> np.ndarray:
        """Posterior data mean E[x0 | x] of the diffused mixture."""
        x = np.asarray(x, dtype=np.float64)
        m, v = self._marginal(a, b)
        r = self.posterior_weights(x, a, b)
        gain = a * self.variances / v
        comp = self.means + gain[:, None] * (x[None, :] - m)
        return r @ comp


@dataclass(frozen=True)
class FieldPair:
    """Conditional/unconditional field pair driving guided sampling."""

    conditional: GaussianMixture
    unconditional: GaussianMixture

    def __post_init__(self) -> None:
        if self.conditional.dim != self.unconditional.dim:
            raise ValueError("conditional and unconditional fields must share a dimension")

    @property
    def dim(self) -> int:
        return self.conditional.dim


@dataclass(frozen=True)
class GuidedPrediction:
    """Both field evaluations at one point plus their guided combination.

    Vectors are in the schedule's native parameterization (eps on vp,
    velocity on flow/spherical); the eps_* names follow the vp convention.
    delta_eps is stored explicitly so a cached or synthetic delta can be
    carried without re-deriving it from the pair.
    """

    eps_uncond: np.ndarray
    eps_cond: np.ndarray
    delta_eps: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        for name in ("eps_uncond", "eps_cond", "delta_eps"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.eps_uncond.shape != self.eps_cond.shape or self.eps_uncond.shape != self.delta_eps.shape:
            raise ValueError("prediction vectors must share a shape")
        if not np.isfinite(self.gamma):
            raise ValueError("gamma must be finite")

    @property
    def guided(self) -> np.ndarray:
        return self.guided_at(self.gamma)

    def guided_at(self, gamma: float) -> np.ndarray:
        """Recombine the two stored branches at another guidance scale.

        Costs no field evaluations, which is what lets diagnostics compare
        gamma variants without touching the NFE count.
        """
        return self.eps_uncond + gamma * self.delta_eps


def exact_epsilon(mix: GaussianMixture, s: Schedule, x: np.ndarray, t: int) -> np.ndarray:
    a, b = s.marginal_scales(t)
    return mix.epsilon(x, a, b)


def epsilon_jacobian(mix: GaussianMixture, s: Schedule, x: np.ndarray, t: int) -> np.ndarray:
    a, b = s.marginal_scales(t)
    return mix.epsilon_jacobian(x, a, b)


def epsilon_to_velocity(eps: np.ndarray, x: np.ndarray, s: Schedule, t: int) -> np.ndarray:
    """Convert an eps prediction at (x, t) to the native velocity.

    flow:       v = (eps - x) / (1 - sigma)          requires sigma < 1
    spherical:  v = (eps - sin(theta) x) / cos(theta)

    On the interpolation line x = a x0 + b eps both reduce to the exact
    velocities eps - x0 and cos(theta) eps - sin(theta) x0.
    """
    eps = np.asarray(eps, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if s.kind is ScheduleKind.FLOW:
        sigma = s.level(t)
        if sigma >= 1.0:
            raise ValueError("eps/velocity conversion is singular at sigma >= 1")
        return (eps - x) / (1.0 - sigma)
    if s.kind is ScheduleKind.SPHERICAL:
        theta = s.level(t)
        return (eps - np.sin(theta) * x) / np.cos(theta)
    raise ValueError("vp schedules are eps-native; no velocity conversion")


def velocity_to_epsilon(v: np.ndarray, x: np.ndarray, s: Schedule, t: int) -> np.ndarray:
    """Exact inverse of epsilon_to_velocity."""
    v = np.asarray(v, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if s.kind is ScheduleKind.FLOW:
        return x + (1.0 - s.level(t)) * v
    if s.kind is ScheduleKind.SPHERICAL:
        theta = s.level(t)
        return np.cos(theta) * v + np.sin(theta) * x
    raise ValueError("vp schedules are eps-native; no velocity conversion")


def native_prediction(mix: GaussianMixture, s: Schedule, x: np.ndarray, t: int) -> np.ndarray:
    """Exact prediction in the parameterization the schedule's solver consumes.

    The velocity is assembled from posterior moments E[eps|x] and E[x0|x]
    rather than through epsilon_to_velocity, so it stays regular at the pure
    noise endpoint sigma = 1 where the algebraic conversion is 0/0.
    """
    a, b = s.marginal_scales(t)
    if s.kind is ScheduleKind.VP:
        return mix.epsilon(x, a, b)
    eps_mean = mix.epsilon(x, a, b)
    x0_mean = mix.x0_mean(x, a, b)
    if s.kind is ScheduleKind.FLOW:
        return eps_mean - x0_mean
    theta = s.level(t)
    return np.cos(theta) * eps_mean - np.sin(theta) * x0_mean


def native_jacobian(mix: GaussianMixture, s: Schedule, x: np.ndarray, t: int) -> np.ndarray:
    """Jacobian of native_prediction via the affine conversion identities."""
    jac = epsilon_jacobian(mix, s, x, t)
    if s.kind is ScheduleKind.VP:
        return jac
    eye = np.eye(mix.dim)
    if s.kind is ScheduleKind.FLOW:
        sigma = s.level(t)
        if sigma >= 1.0:
            raise ValueError("velocity jacobian is singular at sigma >= 1")
        return (jac - eye) / (1.0 - sigma)
    theta = s.level(t)
    return (jac - np.sin(theta) * eye) / np.cos(theta)


def guided_prediction(pair: FieldPair, s: Schedule, x: np.ndarray, t: int, gamma: float) -> GuidedPrediction:
    """Evaluate both fields at (x, t) and combine with guidance scale gamma."""
    uncond = native_prediction(pair.unconditional, s, x, t)
    cond = native_prediction(pair.conditional, s, x, t)
    return GuidedPrediction(uncond, cond, cond - uncond, float(gamma))
