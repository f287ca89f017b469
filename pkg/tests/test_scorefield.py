"""Analytic mixture fields against independent oracles.

The oracles here never reuse the implementation under test: log densities are
recomputed with a direct per-component sum, gradients and Jacobians are
checked against central finite differences, and the posterior-moment
identity a*E[x0|x] + b*E[eps|x] = x pins the Tweedie bookkeeping exactly.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from z2sampling import FieldPair, GaussianMixture, GuidedPrediction, make_linear_flow, make_linear_vp, vp_to_spherical
from z2sampling.scorefield import (
    epsilon_to_velocity,
    exact_epsilon,
    guided_prediction,
    native_jacobian,
    native_prediction,
    velocity_to_epsilon,
)


def reference_log_density(mix: GaussianMixture, x: np.ndarray, a: float, b: float) -> float:
    """Direct (unstabilized) mixture log density, written independently."""
    total = 0.0
    d = mix.dim
    for w, mu, s2 in zip(mix.weights, mix.means, mix.variances):
        v = a * a * s2 + b * b
        diff = x - a * mu
        total += w * (2.0 * np.pi * v) ** (-d / 2.0) * np.exp(-0.5 * diff @ diff / v)
    return float(np.log(total))


def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_jacobian(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((f(x + e) - f(x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


def two_mode() -> GaussianMixture:
    return GaussianMixture(
        means=np.array([[1.0, 0.5], [-0.8, 0.3]]),
        variances=np.array([0.4, 0.7]),
        weights=np.array([0.6, 0.4]),
    )


def test_log_density_matches_direct_sum():
    mix = two_mode()
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(scale=2.0, size=2)
        a, b = rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0)
        got = mix.log_density(x, a, b)
        want = reference_log_density(mix, x, a, b)
        assert abs(got - want) < 1e-12, f"log density {got} != direct sum {want}"


def test_log_density_stable_in_far_field():
    """Max-subtraction keeps the far tail finite where the direct sum underflows."""
    mix = two_mode()
    x = np.array([80.0, -90.0])
    val = mix.log_density(x, 1.0, 0.1)
    assert np.isfinite(val) and val < -1000.0


def test_score_matches_fd_gradient():
    mix = two_mode()
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.normal(scale=1.5, size=2)
        a, b = rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)
        got = mix.score(x, a, b)
        want = fd_gradient(lambda y: mix.log_density(y, a, b), x)
        assert np.allclose(got, want, atol=1e-6), f"score {got} vs fd {want}"


def test_single_gaussian_closed_forms():
    """One component: score, eps, Jacobian, and posterior mean in closed form."""
    mu, s2 = np.array([0.7, -0.2]), 0.5
    mix = GaussianMixture(mu[None, :], np.array([s2]), np.array([1.0]))
    a, b = 0.8, 0.6
    v = a * a * s2 + b * b
    x = np.array([1.3, 0.4])
    assert np.allclose(mix.score(x, a, b), -(x - a * mu) / v, atol=1e-14)
    assert np.allclose(mix.epsilon(x, a, b), b * (x - a * mu) / v, atol=1e-14)
    assert np.allclose(mix.epsilon_jacobian(x, a, b), (b / v) * np.eye(2), atol=1e-14)
    want_x0 = mu + (a * s2 / v) * (x - a * mu)
    assert np.allclose(mix.x0_mean(x, a, b), want_x0, atol=1e-14)


def test_pure_noise_scales_give_identity_epsilon():
    """At (a, b) = (0, 1) with unit variance the noise estimate is x itself."""
    mix = GaussianMixture(np.array([[0.3, -0.5]]), np.array([1.0]), np.array([1.0]))
    x = np.array([1.0, 1.0])
    eps = mix.epsilon(x, 0.0, 1.0)
    assert np.allclose(eps, x, atol=1e-14)
    assert abs(np.linalg.norm(eps) - np.sqrt(2.0)) < 1e-12


def test_epsilon_jacobian_matches_fd():
    mix = two_mode()
    rng = np.random.default_rng(2)
    for _ in range(8):
        x = rng.normal(scale=1.5, size=2)
        a, b = rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)
        got = mix.epsilon_jacobian(x, a, b)
        want = fd_jacobian(lambda y: mix.epsilon(y, a, b), x)
        assert np.allclose(got, want, atol=1e-6), f"jacobian fd mismatch:\n{got}\n{want}"


def test_posterior_moment_identity():
    """a * E[x0|x] + b * E[eps|x] = x exactly, at any scales and any point."""
    mix = two_mode()
    rng = np.random.default_rng(3)
    for _ in range(25):
        x = rng.normal(scale=2.5, size=2)
        a, b = rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)
        recon = a * mix.x0_mean(x, a, b) + b * mix.epsilon(x, a, b)
        assert np.allclose(recon, x, atol=1e-12), f"moment identity broke: {recon} vs {x}"


def test_posterior_weights_normalize_and_localize():
    mix = two_mode()
    r = mix.posterior_weights(np.array([0.2, 0.1]), 1.0, 0.5)
    assert abs(r.sum() - 1.0) < 1e-12 and np.all(r > 0.0)
    # With equal variances the nearest mode owns the low-noise posterior.
    equal = GaussianMixture(np.array([[2.0, 0.0], [-2.0, 0.0]]), np.array([0.3, 0.3]), np.array([0.5, 0.5]))
    r = equal.posterior_weights(np.array([2.1, 0.2]), 1.0, 0.05)
    assert r[0] > 1.0 - 1e-10, f"posterior failed to lock onto the near mode: {r}"


def test_mixture_validation():
    with pytest.raises(ValueError, match="component count"):
        GaussianMixture(np.zeros((2, 2)), np.ones(3), np.ones(2))
    with pytest.raises(ValueError, match="variances must be positive"):
        GaussianMixture(np.zeros((1, 2)), np.array([0.0]), np.array([1.0]))
    with pytest.raises(ValueError, match="weights must be positive"):
        GaussianMixture(np.zeros((2, 2)), np.ones(2), np.array([1.0, 0.0]))
    mix = GaussianMixture(np.zeros((2, 2)), np.ones(2), np.array([3.0, 1.0]))
    assert np.allclose(mix.weights, [0.75, 0.25]), "weights must normalize to sum 1"


def test_velocity_conversions_round_trip():
    flow = make_linear_flow(10, 0.9)
    sph = vp_to_spherical(make_linear_vp(10, 0.98, 0.05))
    rng = np.random.default_rng(4)
    for s in (flow, sph):
        for t in (1, 5, 10):
            x = rng.standard_normal(3)
            eps = rng.standard_normal(3)
            v = epsilon_to_velocity(eps, x, s, t)
            back = velocity_to_epsilon(v, x, s, t)
            assert np.allclose(back, eps, atol=1e-12), f"{s.kind.value} conversion not inverse at t={t}"


def test_velocity_on_interpolation_line_is_eps_minus_x0():
    """x = (1-sigma) x0 + sigma eps makes the flow velocity exactly eps - x0."""
    s = make_linear_flow(4, 0.8)
    x0 = np.array([0.4, -1.1])
    eps = np.array([0.9, 0.2])
    t = 2
    sigma = s.level(t)
    x = (1.0 - sigma) * x0 + sigma * eps
    v = epsilon_to_velocity(eps, x, s, t)
    assert np.allclose(v, eps - x0, atol=1e-14)


def test_velocity_conversion_guards():
    flow = make_linear_flow(3, 1.0)  # sigma_T = 1 exactly
    x = np.zeros(2)
    with pytest.raises(ValueError, match="singular at sigma >= 1"):
        epsilon_to_velocity(x, x, flow, 3)
    vp = make_linear_vp(3, 0.9, 0.1)
    with pytest.raises(ValueError, match="eps-native"):
        epsilon_to_velocity(x, x, vp, 1)
    with pytest.raises(ValueError, match="eps-native"):
        velocity_to_epsilon(x, x, vp, 1)


def test_native_prediction_agrees_with_algebraic_conversion():
    """Away from sigma = 1 both velocity routes coincide; vp is eps itself."""
    mix = two_mode()
    vp = make_linear_vp(8, 0.97, 0.05)
    flow = make_linear_flow(8, 0.9)
    sph = vp_to_spherical(vp)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(2)
    for t in (1, 4, 8):
        assert np.array_equal(native_prediction(mix, vp, x, t), exact_epsilon(mix, vp, x, t))
        for s in (flow, sph):
            direct = native_prediction(mix, s, x, t)
            converted = epsilon_to_velocity(exact_epsilon(mix, s, x, t), x, s, t)
            assert np.allclose(direct, converted, atol=1e-12), f"{s.kind.value} velocity routes differ at t={t}"


def test_native_prediction_regular_at_pure_noise_endpoint():
    """The moment form stays finite at sigma = 1 where the conversion is 0/0."""
    mix = two_mode()
    flow = make_linear_flow(3, 1.0)
    v = native_prediction(mix, flow, np.array([0.5, -0.2]), 3)
    assert np.all(np.isfinite(v))
    with pytest.raises(ValueError, match="singular"):
        native_jacobian(mix, flow, np.array([0.5, -0.2]), 3)


def test_native_jacobian_matches_fd():
    mix = two_mode()
    vp = make_linear_vp(6, 0.96, 0.06)
    flow = make_linear_flow(6, 0.9)
    sph = vp_to_spherical(vp)
    x = np.array([0.7, -0.4])
    for s in (vp, flow, sph):
        for t in (2, 5):
            got = native_jacobian(mix, s, x, t)
            want = fd_jacobian(lambda y, s=s, t=t: native_prediction(mix, s, y, t), x)
            assert np.allclose(got, want, atol=1e-6), f"{s.kind.value} native jacobian off at t={t}"


def test_guided_prediction_combination():
    pair = FieldPair(
        GaussianMixture(np.array([[1.0, 0.5]]), np.array([0.4]), np.array([1.0])),
        two_mode(),
    )
    s = make_linear_vp(5, 0.95, 0.05)
    x = np.array([0.3, -0.6])
    pred = guided_prediction(pair, s, x, 3, gamma=2.5)
    assert np.array_equal(pred.delta_eps, pred.eps_cond - pred.eps_uncond)
    assert np.array_equal(pred.guided_at(0.0), pred.eps_uncond)
    assert np.allclose(pred.guided, pred.eps_uncond + 2.5 * pred.delta_eps, atol=0)
    assert np.allclose(pred.guided_at(1.0), pred.eps_cond, atol=1e-15)


def test_guided_prediction_validation():
    with pytest.raises(ValueError, match="share a shape"):
        GuidedPrediction(np.zeros(2), np.zeros(3), np.zeros(2), 1.0)
    with pytest.raises(ValueError, match="gamma must be finite"):
        GuidedPrediction(np.zeros(2), np.zeros(2), np.zeros(2), np.inf)
    with pytest.raises(ValueError, match="share a dimension"):
        FieldPair(
            GaussianMixture(np.zeros((1, 2)), np.ones(1), np.ones(1)),
            GaussianMixture(np.zeros((1, 3)), np.ones(1), np.ones(1)),
        )


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    n=st.integers(min_value=1, max_value=4),
    d=st.integers(min_value=1, max_value=3),
)
def test_moment_identity_property(seed, n, d):
    """The Tweedie reconstruction holds for any mixture, point, and scales."""
    rng = np.random.default_rng(seed)
    mix = GaussianMixture(
        rng.normal(scale=2.0, size=(n, d)),
        rng.uniform(0.05, 2.0, size=n),
        rng.uniform(0.1, 1.0, size=n),
    )
    x = rng.normal(scale=2.0, size=d)
    a, b = rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)
    recon = a * mix.x0_mean(x, a, b) + b * mix.epsilon(x, a, b)
    assert np.allclose(recon, x, atol=1e-10)
    r = mix.posterior_weights(x, a, b)
    assert abs(r.sum() - 1.0) < 1e-12
