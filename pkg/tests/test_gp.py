import numpy as np
import pytest

from dosebo.gp import (
    N_MIN,
    GPFit,
    InputPoint,
    KernelParams,
    TrainingSet,
    _fit_at,
    _lml_and_grad,
    fit_hyperparameters,
    initial_params,
    log_marginal_likelihood,
    posterior_moments,
    sample_posterior,
)

from .conftest import random_dataset
from .oracles import oracle_gls_mean, oracle_lml, oracle_posterior


def _rel_err(a, b):
    return np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(1.0, np.abs(b)))


# Story: the whole engine leans on these two numbers. Both the posterior
# moments and the marginal likelihood must match a dense-inverse oracle on
# a spread of random problems, not just a hand-picked one.
@pytest.mark.parametrize("trial", range(10))
def test_posterior_and_lml_match_dense_oracle(trial):
    rng = np.random.default_rng(2000 + trial)
    training, params = random_dataset(rng)
    q = rng.uniform(0, 1, size=(6, training.dim))

    fit = _fit_at(training, params, converged=True)
    post = posterior_moments(fit, q)
    mean, var = oracle_posterior(
        training.points, training.responses, q,
        params.lengthscales, params.scale, params.noise,
    )
    assert _rel_err(post.mean, mean) < 1e-8
    assert _rel_err(post.variance, var) < 1e-8

    lml = log_marginal_likelihood(training, params)
    assert _rel_err(lml, oracle_lml(
        training.points, training.responses,
        params.lengthscales, params.scale, params.noise,
    )) < 1e-8

    assert _rel_err(fit.mean, oracle_gls_mean(
        training.points, training.responses, params.lengthscales, params.noise
    )) < 1e-8


# Story: the optimizer consumes analytic gradients; a silent sign or factor
# error would degrade every fit, so check against central differences.
def test_lml_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    training, params = random_dataset(rng, n=12, dim=2)
    x, y = training.points, training.responses
    theta = np.log(np.r_[params.lengthscales, params.scale, params.noise])

    _, grad = _lml_and_grad(x, y, theta, None)
    eps = 1e-6
    for i in range(len(theta)):
        up, dn = theta.copy(), theta.copy()
        up[i] += eps
        dn[i] -= eps
        num = (_lml_and_grad(x, y, up, None)[0] - _lml_and_grad(x, y, dn, None)[0]) / (2 * eps)
        assert abs(grad[i] - num) < 1e-5 * max(1.0, abs(num))


# Story: with almost no data the hyperparameters must stay at their
# documented initial values and the fit must say it did not converge.
def test_small_samples_keep_initial_values():
    training = TrainingSet(np.array([[0.1, 0.2], [0.8, 0.9]]), np.array([1.0, -1.0]))
    assert training.n < N_MIN
    fit = fit_hyperparameters(training)
    assert fit.params == initial_params(2, training.responses)
    assert not fit.converged


def test_initial_lengthscale_is_half_sqrt_dim():
    for dim in (1, 2, 3, 4):
        params = initial_params(dim)
        assert params.lengthscales == (np.sqrt(dim) / 2.0,) * dim
    # scale starts at the sample variance of the responses, noise at 1
    p = initial_params(2, [1.0, 3.0, 5.0])
    assert p.scale == pytest.approx(4.0)
    assert p.noise == 1.0


# Story: refitting on identical data must give identical results, because
# event-log replay rebuilds every fit from scratch.
def test_fit_is_deterministic():
    rng = np.random.default_rng(11)
    training, _ = random_dataset(rng, n=10, dim=2)
    a = fit_hyperparameters(training)
    b = fit_hyperparameters(training)
    assert a.params == b.params
    assert a.lml == b.lml
    assert a.mean == b.mean


# Story: optimization should never return something worse than where it
# started; when it cannot improve, the initial values win.
def test_fit_never_loses_to_initialization():
    rng = np.random.default_rng(23)
    training, _ = random_dataset(rng, n=15, dim=2)
    init = initial_params(training.dim, training.responses)
    fit = fit_hyperparameters(training, init=init)
    assert fit.lml >= log_marginal_likelihood(training, init) - 1e-9


# Story: duplicated inputs make the correlation matrix singular; the jitter
# ladder has to rescue the factorization without changing the answer much.
def test_duplicate_points_need_jitter_but_still_fit():
    x = np.array([[0.5, 0.5], [0.5, 0.5], [0.2, 0.8], [0.8, 0.2]])
    y = np.array([1.0, 1.0, 0.0, 0.0])
    params = KernelParams(lengthscales=(1.0, 1.0), scale=1.0, noise=0.0)
    fit = _fit_at(TrainingSet(x, y), params, converged=False)
    assert fit.jitter > 0
    post = posterior_moments(fit, np.array([[0.5, 0.5]]))
    assert abs(post.mean[0] - 1.0) < 0.05
    assert np.all(post.variance >= 0)


# Story: predictions at the training points should reproduce the data when
# the noise term is tiny, and the variance there should collapse.
def test_interpolation_with_tiny_noise():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, size=(8, 2))
    y = rng.normal(size=8)
    params = KernelParams(lengthscales=(0.8, 0.8), scale=2.0, noise=1e-9)
    fit = _fit_at(TrainingSet(x, y), params, converged=False)
    post = posterior_moments(fit, x)
    np.testing.assert_allclose(post.mean, y, atol=1e-5)
    assert np.all(post.variance < 1e-5)
    assert np.all(post.variance >= 0)


# Story: InputPoint is the typed face of the input space; coordinates
# outside the unit cube are contract violations.
def test_input_point_validation():
    p = InputPoint(dose=(0.25, 0.5), covariates=(1.0,))
    np.testing.assert_array_equal(p.coords, [0.25, 0.5, 1.0])
    with pytest.raises(ValueError, match="unit cube"):
        InputPoint(dose=(1.5, 0.0))


def test_training_set_validation():
    with pytest.raises(ValueError, match="equal length"):
        TrainingSet(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError, match="finite"):
        TrainingSet(np.zeros((2, 2)), np.array([np.nan, 0.0]))


# Story: posterior sampling feeds the recommendation distribution; its
# first two moments have to agree with the analytic posterior.
def test_sample_posterior_moments_match_analytic():
    rng = np.random.default_rng(9)
    training, params = random_dataset(rng, n=10, dim=2)
    fit = _fit_at(training, params, converged=True)
    q = rng.uniform(0, 1, size=(4, 2))
    s = 200_000
    draws = sample_posterior(fit, q, s, seed=123)
    post = posterior_moments(fit, q)
    mean_tol = 4 * np.sqrt(post.variance.max() / s) + 1e-6
    np.testing.assert_allclose(draws.mean(axis=0), post.mean, atol=mean_tol)
    np.testing.assert_allclose(draws.var(axis=0), post.variance, rtol=0.05)


def test_sample_posterior_deterministic_and_duplicate_columns():
    rng = np.random.default_rng(10)
    training, params = random_dataset(rng, n=8, dim=2)
    fit = _fit_at(training, params, converged=True)
    q = np.array([[0.3, 0.3], [0.6, 0.6], [0.3, 0.3]])
    a = sample_posterior(fit, q, 50, seed=7)
    b = sample_posterior(fit, q, 50, seed=7)
    np.testing.assert_array_equal(a, b)
    # identical query points must give identical sampled values
    np.testing.assert_array_equal(a[:, 0], a[:, 2])


def test_factorization_property_reproduces_covariance():
    rng = np.random.default_rng(12)
    training, params = random_dataset(rng, n=9, dim=3)
    fit = _fit_at(training, params, converged=True)
    root = fit.factorization
    from dosebo.gp import build_covariance

    np.testing.assert_allclose(root @ root.T, build_covariance(training.points, params), rtol=1e-10)


def test_kernel_params_validation():
    with pytest.raises(ValueError, match="positive"):
        KernelParams(lengthscales=(0.0, 1.0))
    with pytest.raises(ValueError, match="positive"):
        KernelParams(lengthscales=(1.0,), scale=0.0)
    with pytest.raises(ValueError, match="nonnegative"):
        KernelParams(lengthscales=(1.0,), noise=-0.1)
