"""Order fitting, error measurements, and backward-error agreement.

fit_order is checked on synthetic exact power laws before anything downstream
relies on it; tau and E_TSS are compared against independent reconstructions
from the field primitives; the backward-error slopes are measured on the
affine field where every term has a closed form.
"""

from __future__ import annotations

import numpy as np
import pytest

from z2sampling import (
    FieldPair,
    GaussianMixture,
    LatentState,
    SamplerConfig,
    coefficients,
    forward_step,
    make_linear_flow,
    make_linear_vp,
    run_trajectory,
    vp_to_spherical,
)
from z2sampling.analysis import (
    AffineVelocityPair,
    FrozenMixtureVelocityPair,
    bea_agreement,
    cosine_similarity_track,
    effective_field,
    effective_velocity,
    fit_order,
    integrate_flow_rk4,
    lte_order_sweep,
    measure_e_tss,
    measure_tau,
    tau_leading_order,
    z2_euler_trajectory,
)
from z2sampling.samplers import FieldEvaluator
from z2sampling.scorefield import native_prediction


def curved_pair() -> FieldPair:
    """Unequal variances keep the guidance delta x-dependent (curved)."""
    return FieldPair(
        GaussianMixture(np.array([[1.0, 0.5]]), np.array([0.4]), np.array([1.0])),
        GaussianMixture(np.array([[-0.3, 0.2]]), np.array([0.8]), np.array([1.0])),
    )


def affine_fields() -> AffineVelocityPair:
    return AffineVelocityPair(
        np.array([[0.4]]), np.array([0.3]), np.array([[-0.25]]), np.array([0.8]),
    )


# ---------------------------------------------------------------------------
# fit_order
# ---------------------------------------------------------------------------

def test_fit_order_recovers_exact_power_law():
    h = np.array([0.2, 0.1, 0.05, 0.025, 0.0125])
    e = 3.0 * h**2.5
    fit = fit_order(h, e)
    assert abs(fit.slope - 2.5) < 1e-10, f"slope {fit.slope} != 2.5"
    assert abs(fit.intercept - np.log(3.0)) < 1e-10
    assert fit.r_squared > 1.0 - 1e-12
    assert fit.n_dropped == 0


def test_fit_order_drop_largest_recorded():
    h = np.array([0.4, 0.2, 0.1, 0.05, 0.025, 0.0125])
    e = h**2.0
    e[0] *= 50.0  # pre-asymptotic outlier at the largest h
    full = fit_order(h, e)
    dropped = fit_order(h, e, drop_largest=1)
    assert dropped.n_dropped == 1 and len(dropped.step_sizes) == 5
    assert abs(dropped.slope - 2.0) < 1e-10
    assert full.r_squared < dropped.r_squared


def test_fit_order_preconditions():
    h4 = np.array([0.2, 0.1, 0.05, 0.01])
    with pytest.raises(ValueError, match="strictly decreasing"):
        fit_order(np.array([0.1, 0.2, 0.05, 0.01]), np.ones(4))
    with pytest.raises(ValueError, match="at least 4 points"):
        fit_order(np.array([0.2, 0.1, 0.01]), np.ones(3))
    with pytest.raises(ValueError, match="at least 4 points"):
        fit_order(h4, h4, drop_largest=1)
    with pytest.raises(ValueError, match="two largest"):
        fit_order(h4, h4, drop_largest=3)
    with pytest.raises(ValueError, match="one decade"):
        fit_order(np.array([0.2, 0.15, 0.1, 0.05]), np.ones(4))
    with pytest.raises(ValueError, match="matching 1-d"):
        fit_order(h4, np.ones(3))


def test_fit_order_flags_machine_noise():
    h = np.array([0.2, 0.1, 0.05, 0.01])
    with pytest.raises(ValueError, match="degenerate order fit"):
        fit_order(h, np.full(4, 1e-16))
    with pytest.raises(ValueError, match="degenerate order fit"):
        fit_order(h, np.array([1e-3, 1e-4, 0.0, 1e-6]))


# ---------------------------------------------------------------------------
# tau and E_TSS
# ---------------------------------------------------------------------------

def test_measure_tau_matches_definition():
    """tau = C * (fresh-at-denoised - anchor-recombined), both at gamma2."""
    pair = curved_pair()
    for s in (make_linear_flow(20, 0.9), vp_to_spherical(make_linear_vp(20, 0.99, 0.03))):
        ev = FieldEvaluator(pair, s)
        state = LatentState(np.array([0.9, -0.5]), 10)
        gamma1, gamma2 = 5.5, 0.0
        tau = measure_tau(ev, state, gamma1, gamma2)
        c = coefficients(s, 10)
        pred = ev.peek(state.x, 10, gamma1)
        mid = forward_step(c, state, pred.guided)
        fresh = ev.peek(mid.x, 10, gamma2)
        want = c.c * (fresh.guided - pred.guided_at(gamma2))
        assert np.allclose(tau, want, atol=1e-14), f"{s.kind.value} tau definition broke"
        assert np.linalg.norm(tau) > 0.0, "curved field must give nonzero tau"
        assert ev.nfe == 0, "tau measurement must stay off the NFE ledger"


def test_tau_leading_order_exact_on_affine_uncond():
    """A single-Gaussian unconditional field is affine, so the remainder of
    the expansion vanishes identically: tau == -h^2 * J_vuc * v exactly."""
    pair = curved_pair()
    for T in (100, 400):
        s = make_linear_flow(T, 0.8)
        ev = FieldEvaluator(pair, s)
        state = LatentState(np.array([0.9, -0.5]), T // 2)
        tau = measure_tau(ev, state, 5.5, 0.0)
        lead = tau_leading_order(ev, state, 5.5)
        rel = np.linalg.norm(tau - lead) / np.linalg.norm(tau)
        assert rel < 1e-9, f"affine field must make the leading order exact, got {rel}"


def test_tau_leading_order_prediction_on_curved_field():
    """On a mixture (curved) uncond field the O(h^3) remainder shows, and the
    relative gap to -h^2 * J_vuc * v shrinks as h does."""
    pair = FieldPair(
        GaussianMixture(np.array([[1.0, 0.5]]), np.array([0.4]), np.array([1.0])),
        GaussianMixture(np.array([[-0.8, 0.3], [0.9, -0.6]]), np.array([0.7, 0.3]), np.array([0.5, 0.5])),
    )
    x = np.array([0.9, -0.5])
    rels = []
    for T in (100, 400):
        s = make_linear_flow(T, 0.8)
        ev = FieldEvaluator(pair, s)
        state = LatentState(x, T // 2)
        tau = measure_tau(ev, state, 5.5, 0.0)
        lead = tau_leading_order(ev, state, 5.5)
        rels.append(np.linalg.norm(tau - lead) / np.linalg.norm(tau))
    assert rels[1] < rels[0], f"leading-order gap must shrink with h: {rels}"
    assert rels[1] < 0.05, f"leading order off by {rels[1]:.3f} at h=0.002"


def test_tau_leading_order_needs_flow():
    ev = FieldEvaluator(curved_pair(), make_linear_vp(10, 0.98, 0.04))
    with pytest.raises(ValueError, match="flow geometry"):
        tau_leading_order(ev, LatentState(np.zeros(2), 5), 2.0)


def test_measure_e_tss_matches_definition():
    pair = curved_pair()
    s = make_linear_flow(20, 0.9)
    ev = FieldEvaluator(pair, s)
    x_t = LatentState(np.array([0.4, 0.1]), 9)
    x_prev = LatentState(np.array([0.5, 0.2]), 10)
    got = measure_e_tss(ev, x_t, x_prev, 2.0)
    want = np.linalg.norm(
        ev.peek(x_t.x, 9, 2.0).delta_eps - ev.peek(x_prev.x, 10, 2.0).delta_eps
    )
    assert abs(got - want) < 1e-15
    with pytest.raises(ValueError, match="one step earlier"):
        measure_e_tss(ev, x_t, LatentState(np.zeros(2), 12), 2.0)


def test_e_tss_zero_when_guidance_is_degenerate():
    """cond == uncond means delta == 0 at every (x, t): zero surrogate error."""
    mix = GaussianMixture(np.array([[0.2, -0.4]]), np.array([0.5]), np.array([1.0]))
    ev = FieldEvaluator(FieldPair(mix, mix), make_linear_flow(10, 0.8))
    got = measure_e_tss(ev, LatentState(np.ones(2), 4), LatentState(np.zeros(2), 5), 3.0)
    assert got == 0.0


# ---------------------------------------------------------------------------
# order sweep
# ---------------------------------------------------------------------------

def test_lte_order_sweep_slopes():
    """E_TSS is first order in h, the induced LTE second order."""
    pair = curved_pair()
    result = lte_order_sweep(pair, 2.0, 0.8, [50, 100, 200, 400, 800], np.array([0.9, -0.5]))
    assert 0.8 <= result.e_tss_fit.slope <= 1.2, f"E_TSS slope {result.e_tss_fit.slope}"
    assert 1.8 <= result.lte_fit.slope <= 2.2, f"LTE slope {result.lte_fit.slope}"
    assert result.e_tss_fit.r_squared >= 0.95 and result.lte_fit.r_squared >= 0.95
    assert result.step_sizes == tuple(sorted(result.step_sizes, reverse=True))


def test_lte_order_sweep_exact_surrogate_degenerates():
    pair = curved_pair()
    with pytest.raises(ValueError, match="degenerate order fit"):
        lte_order_sweep(pair, 2.0, 0.8, [50, 100, 200, 400, 800],
                        np.array([0.9, -0.5]), inject_exact_surrogate=True)


def test_lte_order_sweep_needs_a_window():
    pair = curved_pair()
    with pytest.raises(ValueError, match="no zigzag window"):
        lte_order_sweep(pair, 2.0, 0.8, [2, 100, 200, 400, 800], np.array([0.0, 0.0]))


# ---------------------------------------------------------------------------
# effective field forms
# ---------------------------------------------------------------------------

def test_effective_velocity_closed_forms():
    """All three forms against hand-computed affine algebra."""
    f = affine_fields()
    x = np.array([0.6])
    g, h = 3.0, 0.05
    v_uc = f.m_uncond @ x + f.q_uncond
    dv = f.m_delta @ x + f.r_delta
    base = v_uc + 2 * g * dv
    penalty = -h * g * ((f.m_uncond + g * f.m_delta) @ dv)
    generic = 0.5 * h * ((f.m_uncond + 2 * g * f.m_delta) @ base)
    assert np.allclose(effective_velocity(f, x, g, h, "penalty_only"), base + penalty, atol=1e-15)
    assert np.allclose(effective_velocity(f, x, g, h, "full_first_order"), base + penalty + generic, atol=1e-15)
    assert np.allclose(effective_velocity(f, x, g, h, "penalty_ablated"), base + generic, atol=1e-15)
    with pytest.raises(ValueError, match="unknown effective-field form"):
        effective_velocity(f, x, g, h, "quadratic")


def test_effective_field_trivial_limits():
    """gamma1 = 0 gives v_uc for every h; h = 0 gives v_uc + 2*gamma1*dv."""
    pair = curved_pair()
    s = make_linear_flow(10, 0.8)
    x = np.array([0.7, -0.2])
    t = 5
    v_uc = native_prediction(pair.unconditional, s, x, t)
    for h in (0.0, 0.05, 0.3):
        assert np.allclose(effective_field(pair, s, x, t, 0.0, h), v_uc, atol=1e-14)
    v_c = native_prediction(pair.conditional, s, x, t)
    want = v_uc + 2.0 * 1.7 * (v_c - v_uc)
    assert np.allclose(effective_field(pair, s, x, t, 1.7, 0.0), want, atol=1e-14)


def test_frozen_mixture_pair_rejects_vp():
    with pytest.raises(ValueError, match="flow or spherical"):
        FrozenMixtureVelocityPair(curved_pair(), make_linear_vp(5, 0.9, 0.1), 2)


def test_affine_pair_validation():
    with pytest.raises(ValueError, match="agree on dimension"):
        AffineVelocityPair(np.eye(2), np.zeros(2), np.eye(2), np.zeros(3))


# ---------------------------------------------------------------------------
# discrete map and reference integrator
# ---------------------------------------------------------------------------

def test_z2_euler_single_step_oracle():
    f = affine_fields()
    x0 = np.array([0.6])
    g, h = 3.0, 0.1
    x_tilde = x0 - h * g * f.delta(x0)
    want = x_tilde - h * (f.uncond(x_tilde) + g * f.delta(x_tilde))
    got = z2_euler_trajectory(f, x0, g, h, 1)
    assert np.allclose(got, want, atol=1e-15)


def test_rk4_integrates_linear_flow_exactly_enough():
    """dx/dsigma = m*x run down-sigma over the span gives exp(-span*m)*x0."""
    m = 0.7
    x0 = np.array([1.3])
    got = integrate_flow_rk4(lambda x: m * x, x0, span=1.0, step=0.01)
    want = np.exp(-m) * x0
    assert np.allclose(got, want, atol=1e-9), f"rk4 endpoint {got} vs {want}"
    with pytest.raises(ValueError, match="integer number of reference steps"):
        integrate_flow_rk4(lambda x: x, x0, span=1.0, step=0.3)


# ---------------------------------------------------------------------------
# backward-error agreement
# ---------------------------------------------------------------------------

def test_bea_slopes_isolate_the_penalty_term():
    """Second order only with the penalty term present and gamma1 > 0."""
    f = affine_fields()
    x0 = np.array([0.6])
    hs = [0.1 / 2**k for k in range(6)]
    main = bea_agreement(f, x0, 3.0, 1.0, hs, form="full_first_order", ref_divisor=40)
    assert main.fit.slope >= 1.8, f"full form slope {main.fit.slope}"
    assert main.fit.r_squared >= 0.95
    control = bea_agreement(f, x0, 0.0, 1.0, hs, form="penalty_only", ref_divisor=40)
    assert 0.8 <= control.fit.slope <= 1.2, f"gamma1=0 control slope {control.fit.slope}"
    ablated = bea_agreement(f, x0, 3.0, 1.0, hs, form="penalty_ablated", ref_divisor=40)
    assert 0.8 <= ablated.fit.slope <= 1.2, f"ablated slope {ablated.fit.slope}"


def test_bea_rejects_non_dividing_step():
    with pytest.raises(ValueError, match="does not divide the span"):
        bea_agreement(affine_fields(), np.array([0.6]), 1.0, 1.0, [0.3, 0.1, 0.05, 0.01])


# ---------------------------------------------------------------------------
# cosine track
# ---------------------------------------------------------------------------

def test_cosine_similarity_track_matches_record():
    s = make_linear_vp(12, 0.99, 0.03)
    rec = run_trajectory(SamplerConfig("standard", 2.0), s, curved_pair(), seed=1)
    track = cosine_similarity_track(rec)
    assert len(track) == len(rec.steps) - 1
    # Entry i relates step i and i+1, matching the per-step cos_sim shifted by one.
    recorded = [d.cos_sim for d in rec.steps[1:]]
    for a, b in zip(track, recorded):
        assert (a is None) == (b is None)
        if a is not None:
            assert abs(a - b) < 1e-15
