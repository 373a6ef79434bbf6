import numpy as np
import pytest

from guidedflow.errors import DomainError, NumericError, StructuralError
from guidedflow.flow import (
    FlowState,
    GaussianMixtureField,
    GaussianMixtureFieldParams,
    VelocityField,
    as_chunk,
    estimate_vjp,
    euler_step,
    gm_velocity,
    gm_velocity_batch,
    gm_velocity_vjp,
    mixture_component_params,
    one_step_estimate,
    sample_unguided,
    sample_unguided_batch,
)


def single_gaussian(mu, scale):
    mu = np.asarray(mu, dtype=float)
    return GaussianMixtureFieldParams(
        weights=np.array([1.0]), means=mu[None], scales=np.array([scale])
    )


def scalar_mixture(means, scales, weights):
    means = np.asarray(means, dtype=float)[:, None, None]
    return GaussianMixtureFieldParams(weights=weights, means=means, scales=scales)


class ConstantField(VelocityField):
    """Velocity independent of the chunk; Jacobian is exactly zero."""

    has_analytic_jacobian = True

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)

    def evaluate(self, chunk, tau, observation=None):
        return np.broadcast_to(self.value, chunk.shape).copy()

    def velocity_vjp(self, chunk, tau, observation, cotangent):
        return np.zeros_like(np.asarray(cotangent, dtype=float))


def mc_velocity_scalar(params, tau, x, n_samples, rng, delta):
    """Independent Monte Carlo oracle: binned regression of (x1 - eps) on x_tau.

    Draws (x1, eps) pairs from the prior and noise, forms path points, and
    averages the target within a +-delta bin around x.
    """
    k = params.weights.size
    comps = rng.choice(k, size=n_samples, p=params.weights)
    x1 = params.means[comps, 0, 0] + params.scales[comps] * rng.standard_normal(n_samples)
    eps = rng.standard_normal(n_samples)
    x_tau = tau * x1 + (1.0 - tau) * eps
    sel = np.abs(x_tau - x) <= delta
    vals = (x1 - eps)[sel]
    assert vals.size > 1000, "bin too empty for a stable oracle"
    return vals.mean(), vals.std(ddof=1) / np.sqrt(vals.size)


# ---------------------------------------------------------------------------
# euler_step


def test_euler_step_zero_velocity_only_advances_time():
    chunk = np.arange(6.0).reshape(3, 2)
    state = FlowState(chunk=chunk, tau=0.0, step_index=0)
    out = euler_step(state, np.zeros((3, 2)), 4)
    assert np.array_equal(out.chunk, chunk)
    assert out.tau == 0.25 and out.step_index == 1


def test_euler_step_single_full_step():
    state = FlowState(chunk=np.zeros((2, 2)), tau=0.0, step_index=0)
    out = euler_step(state, np.ones((2, 2)), 1)
    assert np.array_equal(out.chunk, np.ones((2, 2)))
    assert out.tau == 1.0 and out.step_index == 1


def test_euler_step_tau_is_exact_grid_fraction():
    state = FlowState(chunk=np.zeros((1, 1)), tau=0.0, step_index=0)
    n = 7
    for k in range(n):
        state = euler_step(state, np.zeros((1, 1)), n)
        assert state.tau == state.step_index / n  # bit-exact, not accumulated


def test_euler_step_shape_mismatch():
    state = FlowState(chunk=np.zeros((2, 2)), tau=0.0, step_index=0)
    with pytest.raises(StructuralError):
        euler_step(state, np.zeros((3, 2)), 4)


def test_euler_step_nonfinite_velocity_names_step():
    state = FlowState(chunk=np.zeros((2, 2)), tau=0.5, step_index=2)
    bad = np.zeros((2, 2))
    bad[1, 0] = np.inf
    with pytest.raises(NumericError, match="step 2"):
        euler_step(state, bad, 4)


def test_euler_step_rejects_stepping_past_end():
    state = FlowState(chunk=np.zeros((1, 1)), tau=1.0, step_index=4)
    with pytest.raises(StructuralError):
        euler_step(state, np.zeros((1, 1)), 4)


def test_euler_convergence_to_exact_flow_endpoint():
    # For a single Gaussian prior the flow map is x(tau) = tau*mu + m(tau)*x0
    # with m(tau) = sqrt(tau^2 s^2 + (1-tau)^2), so the endpoint is mu + s*x0.
    rng = np.random.default_rng(3)
    mu = rng.standard_normal((2, 3))
    s = 0.5
    x0 = rng.standard_normal((2, 3))
    exact = mu + s * x0
    params = single_gaussian(mu, s)

    # independent dense integrator with the velocity written out inline
    x = x0.copy()
    n_dense = 10_000
    for k in range(n_dense):
        tau = k / n_dense
        coef = (tau * s * s - (1 - tau)) / (tau * tau * s * s + (1 - tau) ** 2)
        x = x + (mu + coef * (x - tau * mu)) / n_dense
    assert np.linalg.norm(x - exact) < 1e-3

    errors = []
    steps = [10, 20, 40, 80]
    for n in steps:
        state = FlowState(chunk=x0.copy(), tau=0.0, step_index=0)
        for k in range(n):
            state = euler_step(state, gm_velocity(state.chunk, k / n, params), n)
        errors.append(np.linalg.norm(state.chunk - exact))
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    assert -1.3 <= slope <= -0.7


# ---------------------------------------------------------------------------
# gm_velocity


def test_gm_velocity_at_tau_zero_is_mean_minus_x():
    rng = np.random.default_rng(0)
    mu = rng.standard_normal((2, 2))
    params = single_gaussian(mu, 0.7)
    for _ in range(5):
        x = 2.0 * rng.standard_normal((2, 2))
        assert np.allclose(gm_velocity(x, 0.0, params), mu - x, atol=1e-12)


def test_gm_velocity_tau_zero_against_mc_regression():
    params = single_gaussian(np.array([[0.8]]), 0.5)
    rng = np.random.default_rng(42)
    for x in (-0.5, 0.4):
        est, se = mc_velocity_scalar(params, 0.0, x, 1_000_000, rng, delta=0.01)
        exact = gm_velocity(np.array([[x]]), 0.0, params)[0, 0]
        assert abs(exact - est) <= 3 * se


def test_gm_velocity_symmetric_zero():
    params = single_gaussian(np.zeros((1, 1)), 1.0)
    assert gm_velocity(np.zeros((1, 1)), 0.5, params)[0, 0] == pytest.approx(0.0, abs=1e-14)


def test_gm_velocity_bimodal_symmetry_and_mc():
    params = scalar_mixture([-1.0, 1.0], [0.1, 0.1], [0.5, 0.5])
    assert gm_velocity(np.zeros((1, 1)), 0.5, params)[0, 0] == pytest.approx(0.0, abs=1e-12)
    rng = np.random.default_rng(7)
    est, se = mc_velocity_scalar(params, 0.5, 0.3, 1_000_000, rng, delta=0.01)
    exact = gm_velocity(np.array([[0.3]]), 0.5, params)[0, 0]
    assert abs(exact - est) <= 3 * se


def test_gm_velocity_single_equals_duplicated_component():
    mu = np.array([[0.3, -0.2]])
    one = mixture_component_params([(1.0, mu, 0.6)])
    two = mixture_component_params([(0.5, mu, 0.6), (0.5, mu, 0.6)])
    x = np.array([[0.9, -1.4]])
    for tau in (0.0, 0.3, 0.77):
        assert np.allclose(gm_velocity(x, tau, one), gm_velocity(x, tau, two), atol=1e-12)


def test_gm_velocity_domain_and_structure_errors():
    params = single_gaussian(np.zeros((1, 1)), 1.0)
    with pytest.raises(DomainError):
        gm_velocity(np.zeros((1, 1)), 1.0, params)
    with pytest.raises(DomainError):
        gm_velocity(np.zeros((1, 1)), -0.1, params)
    with pytest.raises(StructuralError):
        GaussianMixtureFieldParams(np.array([]), np.zeros((0, 1, 1)), np.array([]))
    with pytest.raises(StructuralError):
        GaussianMixtureFieldParams(np.array([0.6, 0.5]), np.zeros((2, 1, 1)), np.array([1.0, 1.0]))
    with pytest.raises(StructuralError):
        GaussianMixtureFieldParams(np.array([1.0]), np.zeros((1, 1, 1)), np.array([0.0]))


def test_gm_velocity_batch_matches_single():
    rng = np.random.default_rng(5)
    params = scalar_mixture([-0.5, 0.8], [0.4, 0.9], [0.3, 0.7])
    batch = rng.standard_normal((6, 1, 1))
    vb = gm_velocity_batch(batch, 0.4, params)
    for i in range(6):
        assert np.allclose(vb[i], gm_velocity(batch[i], 0.4, params), atol=1e-14)


def test_sampler_moments_match_prior():
    # 10,000 unguided n=64 samples: mean within 0.05, per-coordinate std
    # within 10% of the prior for several scales.
    rng = np.random.default_rng(11)
    mu = np.array([[0.3, -0.4], [0.1, 0.6]])
    for s in (0.2, 0.4, 1.0):
        params = single_gaussian(mu, s)
        noise = rng.standard_normal((10_000, 2, 2))
        samples = sample_unguided_batch(params, noise, 64)
        err_mean = np.abs(samples.mean(axis=0) - mu)
        assert err_mean.max() < 0.05
        stds = samples.std(axis=0)
        assert np.all(np.abs(stds - s) / s < 0.10)


def test_sample_unguided_matches_batch_path():
    params = single_gaussian(np.array([[0.5, -0.5]]), 0.4)
    field = GaussianMixtureField(params)
    noise = np.random.default_rng(2).standard_normal((1, 2))
    a = sample_unguided(field, noise, 16)
    b = sample_unguided_batch(params, noise[None], 16)[0]
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# one_step_estimate


def test_one_step_estimate_endpoints():
    chunk = np.array([[1.0, 2.0]])
    vel = np.array([[5.0, -3.0]])
    assert np.array_equal(one_step_estimate(chunk, vel, 1.0), chunk)
    assert np.array_equal(one_step_estimate(np.zeros((1, 2)), vel, 0.0), vel)


def test_one_step_estimate_near_deterministic_prior():
    # With s -> 0 the clean estimate collapses to the prior mean on on-path
    # inputs at any tau.
    rng = np.random.default_rng(9)
    mu = np.array([[0.4, -0.7], [0.2, 0.1]])
    s = 1e-4
    params = single_gaussian(mu, s)
    for tau in (0.1, 0.3, 0.5, 0.7, 0.9):
        a1 = mu + s * rng.standard_normal((2, 2))
        eps = rng.standard_normal((2, 2))
        x = tau * a1 + (1 - tau) * eps
        est = one_step_estimate(x, gm_velocity(x, tau, params), tau)
        assert np.abs(est - mu).max() < 1e-6


def test_one_step_estimate_shape_error():
    with pytest.raises(StructuralError):
        one_step_estimate(np.zeros((2, 2)), np.zeros((1, 2)), 0.5)


# ---------------------------------------------------------------------------
# estimate_vjp


def test_estimate_vjp_constant_field_returns_cotangent():
    field = ConstantField(np.array([0.3, -0.1]))
    u = np.random.default_rng(1).standard_normal((3, 2))
    out = estimate_vjp(field, np.zeros((3, 2)), 0.4, None, u)
    assert np.array_equal(out, u)


def test_estimate_vjp_scalar_closed_form():
    # For a scalar single-Gaussian field dv/dx = (tau s^2 - (1-tau)) / (tau^2 s^2 + (1-tau)^2).
    s, tau = 0.6, 0.35
    params = single_gaussian(np.array([[0.2]]), s)
    field = GaussianMixtureField(params)
    u = np.array([[1.7]])
    coef = (tau * s * s - (1 - tau)) / (tau * tau * s * s + (1 - tau) ** 2)
    expected = u * (1 + (1 - tau) * coef)
    got = estimate_vjp(field, np.array([[0.5]]), tau, None, u)
    assert np.allclose(got, expected, rtol=1e-12)

    class Hidden(GaussianMixtureField):
        has_analytic_jacobian = False

    fd = estimate_vjp(Hidden(params), np.array([[0.5]]), tau, None, u)
    assert np.allclose(got, fd, rtol=1e-6)


def test_estimate_vjp_matches_finite_differences_random_mixtures():
    rng = np.random.default_rng(21)

    class Hidden(GaussianMixtureField):
        has_analytic_jacobian = False

    for _ in range(25):
        k, h, d = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 3)
        params = GaussianMixtureFieldParams(
            weights=np.full(k, 1.0 / k),
            means=rng.standard_normal((k, h, d)),
            scales=rng.uniform(0.3, 1.2, k),
        )
        x = 1.5 * rng.standard_normal((h, d))
        u = rng.standard_normal((h, d))
        tau = rng.uniform(0.05, 0.8)
        a = estimate_vjp(GaussianMixtureField(params), x, tau, None, u)
        n = estimate_vjp(Hidden(params), x, tau, None, u)
        assert np.linalg.norm(a - n) <= 1e-4 * max(np.linalg.norm(n), 1e-8)


def test_estimate_vjp_linear_in_cotangent():
    params = scalar_mixture([-1.0, 0.5], [0.3, 0.8], [0.4, 0.6])
    field = GaussianMixtureField(params)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 1))
    u1, u2 = rng.standard_normal((1, 1)), rng.standard_normal((1, 1))
    lhs = estimate_vjp(field, x, 0.6, None, u1 + 2.0 * u2)
    rhs = estimate_vjp(field, x, 0.6, None, u1) + 2.0 * estimate_vjp(field, x, 0.6, None, u2)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_estimate_vjp_nonfinite_names_coordinate():
    class BadField(VelocityField):
        has_analytic_jacobian = True

        def evaluate(self, chunk, tau, observation=None):
            return np.zeros_like(chunk)

        def velocity_vjp(self, chunk, tau, observation, cotangent):
            out = np.zeros_like(cotangent)
            out[0, 1] = np.nan
            return out

    with pytest.raises(NumericError, match=r"\(0, 1\)"):
        estimate_vjp(BadField(), np.zeros((2, 2)), 0.5, None, np.ones((2, 2)))


def test_gm_velocity_vjp_rejects_bad_cotangent_shape():
    params = single_gaussian(np.zeros((2, 2)), 1.0)
    with pytest.raises(StructuralError):
        gm_velocity_vjp(np.zeros((2, 2)), 0.5, params, np.zeros((1, 2)))


def test_as_chunk_validation():
    with pytest.raises(StructuralError):
        as_chunk(np.zeros(3))
    with pytest.raises(NumericError):
        as_chunk(np.array([[np.nan, 0.0]]))
