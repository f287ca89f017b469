"""Error measurements and order-of-accuracy experiments.

Three error families are measured, never assumed:

  * tau: spatial inversion error.  The explicit zigzag inverts with a field
    evaluation at the denoised point x_{t-1}; the collapsed path reuses the
    anchor evaluation at x_t.  tau is the difference of the two inversion
    outcomes from the same anchor.  On the flow geometry its leading order is
    -h^2 * J_vuc(x) * v(x, gamma1): the displacement between the two
    evaluation points is -h*v, and the inversion scales the field gap by
    C = h.
  * E_TSS: surrogate error of the cached delta, ||delta^t(x_t) -
    delta^{t+1}(x~_{t+1})||.  One step of time plus an O(h) displacement in
    space, so O(h) overall.
  * LTE: per-step cost of the surrogate, measured as the gap between the
    cached-delta step and the exact-anchor-delta step from the same state.
    The forward coefficient B = O(h) multiplies E_TSS, so O(h^2).

Orders are established by log-log OLS fits over a step-size sweep
(fit_order), with an r^2 report instead of silent acceptance.

The backward-error harness (bea_agreement) compares the discrete collapsed
trajectory (exact anchor delta, Euler geometry A=1, B=-h, C=h) against the
fine-step flow of an effective field.  Three field forms are supported:

    penalty_only       v_uc + 2*g*dv - h*g*J_v(x,g)*dv
    full_first_order   penalty_only + (h/2)*J_v2(x)*v2(x),  v2 = v_uc + 2*g*dv
    penalty_ablated    v_uc + 2*g*dv + (h/2)*J_v2(x)*v2(x)

penalty_only is the collapsed sampler's effective field with the
integrator-generic correction left out: every explicit one-step map carries a
(h/2)*J_f*f term relative to the exact flow of its own field, regardless of
guidance.  full_first_order adds that term and is the field whose exact flow
the discrete trajectory tracks to second order.  penalty_ablated keeps the
generic term but drops the guidance penalty, which demotes the agreement back
to first order: the penalty term is precisely what the extra order buys.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule, ScheduleKind, make_linear_flow
from .scorefield import FieldPair, native_jacobian, native_prediction
from .solver import LatentState, coefficients, forward_step, inverse_step
from .samplers import (
    FieldEvaluator,
    Phase,
    SamplerConfig,
    SamplerVariant,
    SurrogateCache,
    TrajectoryRecord,
    cosine_similarity,
    phase_for,
    z2_step,
)

__all__ = [
    "OrderFit",
    "fit_order",
    "measure_tau",
    "tau_leading_order",
    "measure_e_tss",
    "OrderSweepResult",
    "lte_order_sweep",
    "AffineVelocityPair",
    "FrozenMixtureVelocityPair",
    "effective_velocity",
    "effective_field",
    "z2_euler_trajectory",
    "integrate_flow_rk4",
    "BeaResult",
    "bea_agreement",
    "cosine_similarity_track",
    "EFFECTIVE_FIELD_FORMS",
]

DEGENERATE_ERROR_FLOOR = 1e-13

EFFECTIVE_FIELD_FORMS = ("penalty_only", "full_first_order", "penalty_ablated")


# ---------------------------------------------------------------------------
# order fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrderFit:
    """OLS fit of log(error) against log(h).

    step_sizes are strictly decreasing; n_dropped records how many of the
    largest step sizes were excluded as outside the asymptotic regime.
    """

    step_sizes: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float
    n_dropped: int


def fit_order(step_sizes, errors, drop_largest: int = 0) -> OrderFit:
    """Fit error ~ C * h^slope on a sweep.

    Requires at least 4 points spanning at least one decade after dropping.
    At most the two largest step sizes may be dropped, and the drop is
    recorded in the result rather than applied silently.  Errors at machine
    noise mean there is no order to fit; that raises instead of returning a
    meaningless slope.
    """
    h = np.asarray(step_sizes, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if h.shape != e.shape or h.ndim != 1:
        raise ValueError("step sizes and errors must be matching 1-d sequences")
    if not np.all(np.diff(h) < 0.0):
        raise ValueError("step sizes must be strictly decreasing")
    if drop_largest < 0 or drop_largest > 2:
        raise ValueError("at most the two largest step sizes may be dropped")
    h, e = h[drop_largest:], e[drop_largest:]
    if h.shape[0] < 4:
        raise ValueError("order fit needs at least 4 points after dropping")
    if h[0] / h[-1] < 10.0:
        raise ValueError("order fit needs step sizes spanning at least one decade")
    if np.any(e <= 0.0) or float(e.max()) < DEGENERATE_ERROR_FLOOR:
        raise ValueError("degenerate order fit: errors at machine noise, no order to measure")
    log_h, log_e = np.log(h), np.log(e)
    slope, intercept = np.polyfit(log_h, log_e, 1)
    resid = log_e - (slope * log_h + intercept)
    ss_res = float(resid @ resid)
    centered = log_e - log_e.mean()
    ss_tot = float(centered @ centered)
    r_squared = 1.0 if ss_tot == 0.0 and ss_res == 0.0 else (0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot)
    return OrderFit(tuple(float(v) for v in h), tuple(float(v) for v in e),
                    float(slope), float(intercept), float(r_squared), drop_largest)


# ---------------------------------------------------------------------------
# pointwise error measurements
# ---------------------------------------------------------------------------

def measure_tau(ev: FieldEvaluator, state: LatentState, gamma1: float, gamma2: float) -> np.ndarray:
    """Spatial inversion error vector at one step.

    Runs the denoising step, then both inversion branches from the denoised
    point: one with a fresh evaluation there, one reusing the anchor
    evaluation recombined at gamma2.  All evaluations use the step-t field.
    """
    t = state.t
    c = coefficients(ev.schedule, t)
    pred = ev.peek(state.x, t, gamma1)
    mid = forward_step(c, state, pred.guided)
    fresh = ev.peek(mid.x, t, gamma2)
    explicit = inverse_step(c, mid, fresh.guided)
    reused = inverse_step(c, mid, pred.guided_at(gamma2))
    return explicit.x - reused.x


def tau_leading_order(ev: FieldEvaluator, state: LatentState, gamma1: float) -> np.ndarray:
    """Leading-order prediction -h^2 * J_vuc(x) * v(x, gamma1), flow geometry."""
    s = ev.schedule
    if s.kind is not ScheduleKind.FLOW:
        raise ValueError("leading-order tau is derived on the flow geometry")
    t = state.t
    h = s.level(t) - s.level(t - 1)
    jac_uncond = native_jacobian(ev.pair.unconditional, s, state.x, t)
    guided = ev.peek(state.x, t, gamma1).guided
    return -h * h * (jac_uncond @ guided)


def measure_e_tss(ev: FieldEvaluator, x_t: LatentState, x_tilde_prev: LatentState, gamma1: float) -> float:
    """Surrogate error ||delta^t(x_t) - delta^{t+1}(x~_{t+1})||."""
    if x_tilde_prev.t != x_t.t + 1:
        raise ValueError("surrogate source must live exactly one step earlier (t+1)")
    here = ev.peek(x_t.x, x_t.t, gamma1).delta_eps
    cached = ev.peek(x_tilde_prev.x, x_tilde_prev.t, gamma1).delta_eps
    return float(np.linalg.norm(here - cached))


# ---------------------------------------------------------------------------
# step-size sweep for E_TSS and LTE orders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrderSweepResult:
    step_sizes: tuple[float, ...]
    e_tss_errors: tuple[float, ...]
    lte_errors: tuple[float, ...]
    e_tss_fit: OrderFit
    lte_fit: OrderFit


def lte_order_sweep(
    pair: FieldPair,
    gamma1: float,
    span: float,
    step_counts,
    x_init: np.ndarray,
    warmup_frac: float = 0.1,
    tail_frac: float = 0.05,
    inject_exact_surrogate: bool = False,
    drop_largest: int = 0,
) -> OrderSweepResult:
    """Median per-step E_TSS and LTE on flow schedules of decreasing h.

    For each step count T a flow schedule over [0, span] is run with the
    collapsed sampler (h = span/T); at every zigzag step the cached-delta step
    and the exact-anchor-delta step are taken from the same state and their
    gap is the LTE.  The trajectory continues along the cached path.  Medians
    across zigzag steps are robust to the window endpoints shifting with T.

    inject_exact_surrogate makes the main path itself use the exact delta;
    both error families then sit at machine noise and fitting raises, which is
    the expected outcome of that control.
    """
    x_init = np.asarray(x_init, dtype=np.float64)
    hs: list[float] = []
    med_etss: list[float] = []
    med_lte: list[float] = []
    for T in step_counts:
        T = int(T)
        s = make_linear_flow(T, span)
        warmup = max(1, round(warmup_frac * T))
        tail = max(1, round(tail_frac * T))
        zigzag = T - warmup - tail
        if zigzag < 1:
            raise ValueError(f"step count {T} leaves no zigzag window")
        cfg = SamplerConfig(SamplerVariant.Z_SQUARED, gamma1, 0.0, warmup, zigzag)
        ev = FieldEvaluator(pair, s)
        state = LatentState(x_init, T)
        cache = SurrogateCache(np.zeros(pair.dim), None)
        etss_vals: list[float] = []
        lte_vals: list[float] = []
        for t in range(T, 0, -1):
            phase = phase_for(cfg, T, t)
            next_exact = None
            if phase is Phase.ZIGZAG and cache.source_step == t + 1:
                exact_delta = ev.peek(state.x, t, gamma1).delta_eps
                etss_vals.append(float(np.linalg.norm(exact_delta - cache.delta_eps)))
                exact_cache = SurrogateCache(exact_delta, t + 1)
                next_exact, _, _ = z2_step(ev, state, exact_cache, cfg, phase)
                if inject_exact_surrogate:
                    cache = exact_cache
            state, cache, _ = z2_step(ev, state, cache, cfg, phase)
            if next_exact is not None:
                lte_vals.append(float(np.linalg.norm(state.x - next_exact.x)))
        if not etss_vals:
            raise ValueError(f"step count {T} produced no measurable zigzag steps")
        hs.append(span / T)
        med_etss.append(float(np.median(etss_vals)))
        med_lte.append(float(np.median(lte_vals)))
    order = np.argsort(hs)[::-1]
    hs = [hs[i] for i in order]
    med_etss = [med_etss[i] for i in order]
    med_lte = [med_lte[i] for i in order]
    return OrderSweepResult(
        tuple(hs),
        tuple(med_etss),
        tuple(med_lte),
        fit_order(hs, med_etss, drop_largest),
        fit_order(hs, med_lte, drop_largest),
    )


# ---------------------------------------------------------------------------
# effective field and backward-error agreement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineVelocityPair:
    """Autonomous affine field pair: uncond = M x + q, delta = R x + r."""

    m_uncond: np.ndarray
    q_uncond: np.ndarray
    m_delta: np.ndarray
    r_delta: np.ndarray

    def __post_init__(self) -> None:
        for name in ("m_uncond", "q_uncond", "m_delta", "r_delta"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        d = self.q_uncond.shape[0]
        if self.m_uncond.shape != (d, d) or self.m_delta.shape != (d, d) or self.r_delta.shape != (d,):
            raise ValueError("affine field blocks must agree on dimension")

    @property
    def dim(self) -> int:
        return self.q_uncond.shape[0]

    def uncond(self, x: np.ndarray) -> np.ndarray:
        return self.m_uncond @ x + self.q_uncond

    def delta(self, x: np.ndarray) -> np.ndarray:
        return self.m_delta @ x + self.r_delta

    def jac_uncond(self, x: np.ndarray) -> np.ndarray:
        return self.m_uncond

    def jac_delta(self, x: np.ndarray) -> np.ndarray:
        return self.m_delta


@dataclass(frozen=True)
class FrozenMixtureVelocityPair:
    """Mixture velocity pair frozen at one schedule level: autonomous in x.

    Freezing the level keeps the backward-error comparison free of hidden
    time-derivative terms while still exercising a curved (non-affine) field.
    """

    pair: FieldPair
    schedule: Schedule
    t: int

    def __post_init__(self) -> None:
        if self.schedule.kind is ScheduleKind.VP:
            raise ValueError("velocity fields need a flow or spherical schedule")

    @property
    def dim(self) -> int:
        return self.pair.dim

    def uncond(self, x: np.ndarray) -> np.ndarray:
        return native_prediction(self.pair.unconditional, self.schedule, x, self.t)

    def delta(self, x: np.ndarray) -> np.ndarray:
        return (native_prediction(self.pair.conditional, self.schedule, x, self.t)
                - native_prediction(self.pair.unconditional, self.schedule, x, self.t))

    def jac_uncond(self, x: np.ndarray) -> np.ndarray:
        return native_jacobian(self.pair.unconditional, self.schedule, x, self.t)

    def jac_delta(self, x: np.ndarray) -> np.ndarray:
        return (native_jacobian(self.pair.conditional, self.schedule, x, self.t)
                - native_jacobian(self.pair.unconditional, self.schedule, x, self.t))


def effective_velocity(fields, x: np.ndarray, gamma1: float, h: float, form: str = "penalty_only") -> np.ndarray:
    """Effective field of the collapsed zigzag step, in the requested form."""
    if form not in EFFECTIVE_FIELD_FORMS:
        raise ValueError(f"unknown effective-field form {form!r}; expected one of {EFFECTIVE_FIELD_FORMS}")
    x = np.asarray(x, dtype=np.float64)
    v_uc = fields.uncond(x)
    dv = fields.delta(x)
    out = v_uc + 2.0 * gamma1 * dv
    if form in ("penalty_only", "full_first_order"):
        jac_guided = fields.jac_uncond(x) + gamma1 * fields.jac_delta(x)
        out = out - h * gamma1 * (jac_guided @ dv)
    if form in ("full_first_order", "penalty_ablated"):
        jac_v2 = fields.jac_uncond(x) + 2.0 * gamma1 * fields.jac_delta(x)
        v2 = v_uc + 2.0 * gamma1 * dv
        out = out + 0.5 * h * (jac_v2 @ v2)
    return out


def effective_field(pair: FieldPair, s: Schedule, x: np.ndarray, t: int, gamma1: float, h: float) -> np.ndarray:
    """Claimed effective field v_uc + 2*g*dv - h*g*J_v(x,g)*dv at (x, t).

    This is the penalty_only form on the mixture velocity field at level t;
    gamma1 = 0 returns v_uc exactly for every h.
    """
    return effective_velocity(FrozenMixtureVelocityPair(pair, s, t), x, gamma1, h, "penalty_only")


def z2_euler_trajectory(fields, x0: np.ndarray, gamma1: float, h: float, n_steps: int) -> np.ndarray:
    """Discrete collapsed trajectory on the Euler geometry (A=1, B=-h, C=h).

    Exact anchor delta each step: translate by -h*gamma1*delta(x), then step
    forward by -h times the guided field at the translated point.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    for _ in range(n_steps):
        x_tilde = x - h * gamma1 * fields.delta(x)
        x = x_tilde - h * (fields.uncond(x_tilde) + gamma1 * fields.delta(x_tilde))
    return x


def integrate_flow_rk4(f, x0: np.ndarray, span: float, step: float) -> np.ndarray:
    """Fixed-step RK4 flow of dx/dsigma = f(x), integrated down-sigma over span."""
    n = round(span / step)
    if n < 1 or abs(n * step - span) > 1e-9 * max(1.0, span):
        raise ValueError("span must be an integer number of reference steps")
    x = np.asarray(x0, dtype=np.float64).copy()
    dt = -step
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


@dataclass(frozen=True)
class BeaResult:
    form: str
    gamma1: float
    step_sizes: tuple[float, ...]
    deviations: tuple[float, ...]
    fit: OrderFit


def bea_agreement(
    fields,
    x0: np.ndarray,
    gamma1: float,
    span: float,
    step_sizes,
    form: str = "full_first_order",
    ref_divisor: int = 100,
    drop_largest: int = 0,
) -> BeaResult:
    """Endpoint deviation between the discrete collapsed trajectory and the
    fine-step flow of the effective field, swept over h.

    The reference integrates the same-form effective field (which depends on
    h) with RK4 at h/ref_divisor, leaving reference error orders below the
    deviation being measured.  Expected slopes: ~2 for full_first_order at
    gamma1 > 0, ~1 for penalty_only at gamma1 = 0 (plain first-order method
    against its own unmodified field) and for penalty_ablated at gamma1 > 0.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    hs: list[float] = []
    devs: list[float] = []
    for h in step_sizes:
        h = float(h)
        n = round(span / h)
        if n < 1 or abs(n * h - span) > 1e-9 * max(1.0, span):
            raise ValueError(f"step size {h} does not divide the span {span}")
        end_disc = z2_euler_trajectory(fields, x0, gamma1, h, n)
        field = lambda x, _h=h: effective_velocity(fields, x, gamma1, _h, form)
        end_flow = integrate_flow_rk4(field, x0, span, h / ref_divisor)
        hs.append(h)
        devs.append(float(np.linalg.norm(end_disc - end_flow)))
    order = np.argsort(hs)[::-1]
    hs = [hs[i] for i in order]
    devs = [devs[i] for i in order]
    return BeaResult(form, float(gamma1), tuple(hs), tuple(devs), fit_order(hs, devs, drop_largest))


def cosine_similarity_track(record: TrajectoryRecord) -> list[float | None]:
    """Cosine similarity of consecutive per-step deltas; None where undefined."""
    deltas = [d.delta_eps for d in record.steps]
    return [cosine_similarity(deltas[i], deltas[i + 1]) for i in range(len(deltas) - 1)]
