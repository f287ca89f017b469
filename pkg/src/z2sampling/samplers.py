"""Sampling loops: standard guided denoising and three zigzag variants.

Variants, with per-step field-evaluation cost (one guided evaluation = 2 NFEs,
conditional + unconditional):

    standard     every step: one guided evaluation, one forward step.  2T NFEs.
    explicit_z   zigzag steps (t > T - zigzag_steps, as printed) re-noise
                 explicitly: forward, invert with gamma2 at the denoised
                 point, forward again from the re-noised point.  Three
                 evaluations per zigzag step: 2T + 4*zigzag_steps NFEs.
    implicit_z   the inversion is replaced by the exact single-step
                 translation x~ = x - C*gamma1*delta(x), using the delta
                 evaluated at the anchor x itself.  Two evaluations per
                 zigzag step: 2T + 2*zigzag_steps NFEs.
    z_squared    like implicit_z but the anchor delta is replaced by the
                 cached delta from the previous step (temporal surrogate), so
                 zigzag steps cost one evaluation like standard ones: 2T NFEs.

implicit_z and z_squared window zigzag steps by
T - warmup - zigzag_steps < t <= T - warmup; explicit_z keeps its printed
window t > T - zigzag_steps and ignores warmup.  The two windows are
deliberately not harmonized; per-step phase labels surface which one applied.

During the zigzag of step t every field evaluation uses the step-t field: the
anchor x_t, the denoised x_{t-1}, and the re-noised x~_t are all evaluated at
noise level t.  The inversion undoes the step-t transition, and the spatial
error tau then isolates where the field was evaluated in space, not in time.

All predictions are in the schedule's native parameterization (see
scorefield).  Field evaluations for diagnostics go through the evaluator's
peek path and never count toward NFE.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .schedule import Schedule
from .scorefield import FieldPair, GuidedPrediction, guided_prediction
from .solver import LatentState, SolverCoefficients, coefficients, forward_step, inverse_step

__all__ = [
    "SamplerVariant",
    "SamplerConfig",
    "Phase",
    "FieldEvaluator",
    "SurrogateCache",
    "StepDiagnostics",
    "TrajectoryRecord",
    "cosine_similarity",
    "standard_step",
    "explicit_zigzag_step",
    "implicit_collapse",
    "collapsed_forward",
    "z2_step",
    "phase_for",
    "run_trajectory",
]

COLLAPSE_RTOL = 1e-12


class SamplerVariant(str, Enum):
    STANDARD = "standard"
    EXPLICIT_Z = "explicit_z"
    IMPLICIT_Z = "implicit_z"
    Z_SQUARED = "z_squared"


class Phase(str, Enum):
    WARMUP = "warmup"
    ZIGZAG = "zigzag"
    STANDARD = "standard"


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler variant plus guidance and window parameters.

    gamma2 (the guidance scale of the explicit inversion) is configurable for
    explicit_z only; the collapsed paths reuse the unconditional branch, which
    pins gamma2 = 0 there.
    """

    variant: SamplerVariant
    gamma1: float
    gamma2: float = 0.0
    warmup: int = 0
    zigzag_steps: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", SamplerVariant(self.variant))
        if not (np.isfinite(self.gamma1) and np.isfinite(self.gamma2)):
            raise ValueError("guidance scales must be finite")
        if self.warmup < 0 or self.zigzag_steps < 0:
            raise ValueError("warmup and zigzag_steps must be >= 0")
        if self.variant in (SamplerVariant.IMPLICIT_Z, SamplerVariant.Z_SQUARED) and self.gamma2 != 0.0:
            raise ValueError(f"{self.variant.value} reuses the anchor prediction; gamma2 must stay 0")


class FieldEvaluator:
    """Guided-field evaluator with an NFE ledger.

    evaluate() is the algorithmic path (2 NFEs per call); peek() is the
    instrumentation path and leaves the ledger untouched.
    """

    def __init__(self, pair: FieldPair, s: Schedule) -> None:
        self.pair = pair
        self.schedule = s
        self.nfe = 0

    def evaluate(self, x: np.ndarray, t: int, gamma: float) -> GuidedPrediction:
        self.nfe += 2
        return guided_prediction(self.pair, self.schedule, x, t, gamma)

    def peek(self, x: np.ndarray, t: int, gamma: float) -> GuidedPrediction:
        return guided_prediction(self.pair, self.schedule, x, t, gamma)


@dataclass
class SurrogateCache:
    """Last delta prediction and the step it was computed at.

    source_step is None only for the zero-initialized cache before any step
    has run; after step t it is t.  A zigzag step consuming a cache whose
    source is not t+1 is using a stale surrogate, which run_trajectory never
    produces but a caller driving z2_step by hand could.
    """

    delta_eps: np.ndarray
    source_step: int | None = None


@dataclass
class StepDiagnostics:
    """Per-step record: phase, coefficients, error measurements."""

    t: int
    phase: Phase
    coeffs: SolverCoefficients
    tau_norm: float
    e_tss: float | None
    delta_eps: np.ndarray
    cos_sim: float | None = None


@dataclass(frozen=True)
class TrajectoryRecord:
    """Full run record: states t=T..0, per-step diagnostics, NFE total."""

    variant: SamplerVariant
    config: SamplerConfig
    states: tuple[LatentState, ...]
    steps: tuple[StepDiagnostics, ...]
    nfe: int
    seed: int | None

    def __post_init__(self) -> None:
        if len(self.states) != len(self.steps) + 1:
            raise ValueError("record needs exactly one more state than steps")

    @property
    def terminal(self) -> LatentState:
        return self.states[-1]

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "gamma1": self.config.gamma1,
            "gamma2": self.config.gamma2,
            "warmup": self.config.warmup,
            "zigzag_steps": self.config.zigzag_steps,
            "nfe": self.nfe,
            "seed": self.seed,
            "states": [{"t": st.t, "x": st.x.tolist()} for st in self.states],
            "steps": [
                {
                    "t": d.t,
                    "phase": d.phase.value,
                    "a": d.coeffs.a,
                    "b": d.coeffs.b,
                    "c": d.coeffs.c,
                    "tau_norm": d.tau_norm,
                    "e_tss": d.e_tss,
                    "cos_sim": d.cos_sim,
                    "delta_eps": d.delta_eps.tolist(),
                }
                for d in self.steps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float | None:
    """Cosine of the angle between u and v; None when either is zero.

    None is the explicit undefined sentinel: a zero delta has no direction,
    and neither 0 nor 1 would be an honest answer.
    """
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return None
    return float(np.dot(u, v) / (nu * nv))


def _translate(state: LatentState, c: SolverCoefficients, gamma1: float, delta: np.ndarray) -> LatentState:
    """Single-step noise-space translation x - C*gamma1*delta, staying at t."""
    return LatentState(state.x - c.c * gamma1 * np.asarray(delta, dtype=np.float64), state.t)


def implicit_collapse(state: LatentState, c: SolverCoefficients, pred: GuidedPrediction) -> LatentState:
    """Collapse forward + exact-reuse inversion into one translation.

    Equals inverse_step(c, forward_step(c, x, pred.guided), pred.guided_at(0))
    exactly when the coefficient duality Ainv*B = -C holds: the composition is
    x + Ainv*B*(eps_u + gamma*delta) + C*eps_u = x - C*gamma*delta.
    """
    if state.t != c.t:
        raise ValueError(f"state at step {state.t} but coefficients for transition {c.t}")
    return _translate(state, c, pred.gamma, pred.delta_eps)


def collapsed_forward(
    c: SolverCoefficients,
    anchor: LatentState,
    x_tilde: LatentState,
    pred_tilde: GuidedPrediction,
    delta: np.ndarray,
    gamma1: float,
) -> LatentState:
    """Forward step from the translated point, cross-checked in anchor form.

    Both forms are computed every call:
        form1 = Phi(x~; pred)        with x~ = anchor - C*gamma1*delta
        form2 = Phi(anchor; pred + gamma1*delta)
    They agree identically when A*C = -B; a violation means the solver pair
    lost its duality, so it raises instead of returning silently.
    """
    form1 = forward_step(c, x_tilde, pred_tilde.guided)
    form2 = c.a * anchor.x + c.b * (pred_tilde.guided + gamma1 * np.asarray(delta, dtype=np.float64))
    residual = float(np.linalg.norm(form1.x - form2))
    scale = 1.0 + float(np.linalg.norm(form1.x))
    if residual > COLLAPSE_RTOL * scale:
        raise AssertionError(
            f"single-step forward equivalence violated at t={c.t}: residual {residual:.3e} "
            f"exceeds {COLLAPSE_RTOL:.0e} * {scale:.3e} (solver duality broken)"
        )
    return form1


def standard_step(ev: FieldEvaluator, state: LatentState, gamma1: float) -> tuple[LatentState, GuidedPrediction]:
    """One guided denoising step t -> t-1."""
    c = coefficients(ev.schedule, state.t)
    pred = ev.evaluate(state.x, state.t, gamma1)
    return forward_step(c, state, pred.guided), pred


def explicit_zigzag_step(ev: FieldEvaluator, state: LatentState, cfg: SamplerConfig) -> tuple[LatentState, StepDiagnostics]:
    """Printed zigzag: denoise, invert at the denoised point, denoise again.

    tau is measured on the spot as the gap between the performed inversion and
    the exact-reuse inversion recombined from the anchor evaluation; the
    recombination is gamma arithmetic on branches already in hand, so the
    measurement costs no extra NFEs.
    """
    t = state.t
    c = coefficients(ev.schedule, t)
    pred = ev.evaluate(state.x, t, cfg.gamma1)
    mid = forward_step(c, state, pred.guided)
    pred_inv = ev.evaluate(mid.x, t, cfg.gamma2)
    x_tilde = inverse_step(c, mid, pred_inv.guided)
    reuse = inverse_step(c, mid, pred.guided_at(cfg.gamma2))
    tau_norm = float(np.linalg.norm(x_tilde.x - reuse.x))
    pred_re = ev.evaluate(x_tilde.x, t, cfg.gamma1)
    nxt = forward_step(c, x_tilde, pred_re.guided)
    diag = StepDiagnostics(t, Phase.ZIGZAG, c, tau_norm, None, pred_re.delta_eps)
    return nxt, diag


def implicit_zigzag_step(ev: FieldEvaluator, state: LatentState, cfg: SamplerConfig) -> tuple[LatentState, StepDiagnostics]:
    """Zigzag with the inversion collapsed to the exact anchor translation."""
    t = state.t
    c = coefficients(ev.schedule, t)
    pred = ev.evaluate(state.x, t, cfg.gamma1)
    x_tilde = implicit_collapse(state, c, pred)

    # The translation must coincide with the two-step composition it replaces.
    composed = inverse_step(c, forward_step(c, state, pred.guided), pred.guided_at(0.0))
    drift = float(np.linalg.norm(x_tilde.x - composed.x))
    if drift > COLLAPSE_RTOL * (1.0 + float(np.linalg.norm(x_tilde.x))):
        raise AssertionError(f"translation/composition mismatch at t={t}: {drift:.3e}")

    # Both inversion branches consume the bitwise-identical reused prediction,
    # so the spatial error is exactly zero; computed literally, not assumed.
    mid = forward_step(c, state, pred.guided)
    reused = pred.guided_at(0.0)
    tau_norm = float(np.linalg.norm(inverse_step(c, mid, reused).x - inverse_step(c, mid, reused).x))

    pred_re = ev.evaluate(x_tilde.x, t, cfg.gamma1)
    nxt = collapsed_forward(c, state, x_tilde, pred_re, pred.delta_eps, cfg.gamma1)
    diag = StepDiagnostics(t, Phase.ZIGZAG, c, tau_norm, 0.0, pred_re.delta_eps)
    return nxt, diag


def z2_step(
    ev: FieldEvaluator,
    state: LatentState,
    cache: SurrogateCache | None,
    cfg: SamplerConfig,
    phase: Phase,
) -> tuple[LatentState, SurrogateCache, StepDiagnostics]:
    """One step of the collapsed sampler in the given phase.

    Zigzag: translate by the cached delta, evaluate once at the translated
    point, step forward (cross-checked in anchor form), refresh the cache.
    Warmup/standard: plain guided step that (re)fills the cache.
    """
    t = state.t
    c = coefficients(ev.schedule, t)
    if phase is Phase.ZIGZAG:
        if cache is None:
            raise ValueError("zigzag step requires an initialized surrogate cache")
        e_tss = None
        if cache.source_step == t + 1:
            exact = ev.peek(state.x, t, cfg.gamma1).delta_eps
            e_tss = float(np.linalg.norm(exact - cache.delta_eps))
        x_tilde = _translate(state, c, cfg.gamma1, cache.delta_eps)
        pred = ev.evaluate(x_tilde.x, t, cfg.gamma1)
        nxt = collapsed_forward(c, state, x_tilde, pred, cache.delta_eps, cfg.gamma1)
        diag = StepDiagnostics(t, phase, c, 0.0, e_tss, pred.delta_eps)
        return nxt, SurrogateCache(pred.delta_eps, t), diag
    nxt, pred = standard_step(ev, state, cfg.gamma1)
    diag = StepDiagnostics(t, phase, c, 0.0, None, pred.delta_eps)
    return nxt, SurrogateCache(pred.delta_eps, t), diag


def phase_for(cfg: SamplerConfig, T: int, t: int) -> Phase:
    """Phase of step t under the variant's window convention.

    Warmup is only a meaningful label when a zigzag window exists; with
    zigzag_steps = 0 every step is plain standard (and z_squared degenerates
    to the standard sampler bit-for-bit, labels included).
    """
    if cfg.variant is SamplerVariant.STANDARD or cfg.zigzag_steps == 0:
        return Phase.STANDARD
    if cfg.variant is SamplerVariant.EXPLICIT_Z:
        return Phase.ZIGZAG if t > T - cfg.zigzag_steps else Phase.STANDARD
    if t > T - cfg.warmup:
        return Phase.WARMUP
    if T - cfg.warmup - cfg.zigzag_steps < t <= T - cfg.warmup:
        return Phase.ZIGZAG
    return Phase.STANDARD


def run_trajectory(
    cfg: SamplerConfig,
    s: Schedule,
    pair: FieldPair,
    seed: int | None = 0,
    x_init: np.ndarray | None = None,
) -> TrajectoryRecord:
    """Run one trajectory from t=T to t=0 and record everything.

    x_init overrides the seeded standard-normal draw at t=T.  Identical
    inputs give bit-identical records: the whole pipeline is deterministic
    float arithmetic with a single seeded draw.
    """
    T = s.T
    if cfg.warmup + cfg.zigzag_steps > T:
        raise ValueError(f"warmup + zigzag_steps = {cfg.warmup + cfg.zigzag_steps} exceeds T = {T}")
    if x_init is None:
        if seed is None:
            raise ValueError("need a seed or an explicit initial state")
        x_init = np.random.default_rng(seed).standard_normal(pair.dim)
    x_init = np.asarray(x_init, dtype=np.float64)
    if x_init.shape != (pair.dim,):
        raise ValueError(f"initial state must have shape ({pair.dim},)")

    ev = FieldEvaluator(pair, s)
    state = LatentState(x_init, T)
    cache = SurrogateCache(np.zeros(pair.dim), None)
    states = [state]
    diags: list[StepDiagnostics] = []
    prev_delta: np.ndarray | None = None
    for t in range(T, 0, -1):
        phase = phase_for(cfg, T, t)
        if cfg.variant is SamplerVariant.EXPLICIT_Z and phase is Phase.ZIGZAG:
            state, diag = explicit_zigzag_step(ev, state, cfg)
        elif cfg.variant is SamplerVariant.IMPLICIT_Z and phase is Phase.ZIGZAG:
            state, diag = implicit_zigzag_step(ev, state, cfg)
        else:
            state, cache, diag = z2_step(ev, state, cache, cfg, phase)
        if prev_delta is not None:
            diag.cos_sim = cosine_similarity(diag.delta_eps, prev_delta)
        prev_delta = diag.delta_eps
        states.append(state)
        diags.append(diag)
    return TrajectoryRecord(cfg.variant, cfg, tuple(states), tuple(diags), ev.nfe, seed)
