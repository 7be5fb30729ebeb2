"""Gaussian-process regression with a constant mean and anisotropic
squared-exponential kernel.

The model for one response surface is

    y ~ N(beta * 1, nu * K),    K_ij = corr(x_i, x_j) + tau2 * 1{i=j},

where ``corr`` is the squared-exponential correlation and the constant mean
``beta`` is profiled out by generalized least squares. Hyperparameters are
set by maximum likelihood (empirical Bayes); until enough data have accrued
the documented initial values are used as-is.

All linear algebra is done on the correlation-scale matrix ``K`` (unit-order
diagonal) with the scale ``nu`` carried separately, which keeps the jitter
ladder meaningful regardless of the response units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpotri
from scipy.spatial.distance import pdist

from . import kernels

# Jitter ladder applied to the correlation-scale diagonal. The first attempt
# is jitter-free so that in the regular case the cached factor reproduces the
# covariance exactly.
_JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

# Below this many observations hyperparameters are never optimized.
N_MIN = 3

# Hyperparameter box (log-scale optimization); nu bounds are relative to the
# sample variance of the responses.
LENGTHSCALE_BOUNDS = (0.05, 10.0)
SCALE_REL_BOUNDS = (1e-4, 100.0)
NOISE_BOUNDS = (1e-6, 10.0)

# Correlation anchors for the design-aware lengthscale box (see
# _lengthscale_box). Nearest unique design points may not decorrelate below
# _NEAR_COR; the farthest pairs may not correlate above _FAR_COR. Without
# this the likelihood on small confounded designs is maximized at degenerate
# modes (lengthscale << grid spacing: independent cell means; lengthscale >>
# design diameter: a constant direction), both of which wreck the surrogate.
_NEAR_COR = 0.5
_FAR_COR = 0.3
_DIST_QUANTILE = 0.05

N_RESTARTS = 5
DEFAULT_FIT_BUDGET = 200

# Restart perturbations must be reproducible so that refitting on identical
# data yields identical fits (event-log replay relies on this).
_RESTART_SEED = 202406


class NumericError(RuntimeError):
    """Raised when a factorization or variance computation cannot be trusted."""


@dataclass(frozen=True)
class InputPoint:
    """A standardized dose combination plus standardized covariate levels."""

    dose: tuple[float, ...]
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dose", tuple(float(v) for v in self.dose))
        object.__setattr__(self, "covariates", tuple(float(v) for v in self.covariates))
        for v in self.dose + self.covariates:
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"coordinate {v} outside the unit cube")

    @property
    def coords(self) -> np.ndarray:
        return np.array(self.dose + self.covariates, dtype=float)


def as_input_matrix(points) -> np.ndarray:
    """Coerce a list of InputPoint (or an array-like) to an (n, d) float array."""
    if isinstance(points, np.ndarray):
        arr = np.atleast_2d(np.asarray(points, dtype=float))
    elif len(points) > 0 and isinstance(points[0], InputPoint):
        arr = np.array([p.coords for p in points], dtype=float)
    else:
        arr = np.atleast_2d(np.asarray(points, dtype=float))
    if arr.ndim != 2:
        raise ValueError("points must form a 2-D array")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class KernelParams:
    """Lengthscales per input coordinate, scale nu, and noise tau2."""

    lengthscales: tuple[float, ...]
    scale: float = 1.0
    noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lengthscales", tuple(float(v) for v in self.lengthscales))
        if any(l <= 0 for l in self.lengthscales):
            raise ValueError("lengthscales must be positive")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def lengthscale_array(self) -> np.ndarray:
        return np.array(self.lengthscales, dtype=float)


@dataclass(frozen=True)
class TrainingSet:
    """Observed inputs and responses for one surface."""

    points: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", as_input_matrix(self.points))
        object.__setattr__(self, "responses", np.asarray(self.responses, dtype=float).ravel())
        if len(self.points) != len(self.responses):
            raise ValueError("points and responses must have equal length")
        if len(self.responses) < 1:
            raise ValueError("training set must contain at least one observation")
        if not np.all(np.isfinite(self.points)) or not np.all(np.isfinite(self.responses)):
            raise ValueError("training data must be finite")

    @classmethod
    def from_points(cls, points: list[InputPoint], responses) -> "TrainingSet":
        return cls(as_input_matrix(points), responses)

    @property
    def n(self) -> int:
        return len(self.responses)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class PosteriorMoments:
    """Pointwise posterior mean and variance at a set of query points."""

    mean: np.ndarray
    variance: np.ndarray


def initial_params(dim: int, responses=None) -> KernelParams:
    """Documented starting values for the hyperparameter search.

    Lengthscales start at sqrt(dim)/2, the midpoint of the maximal distance
    between two points on the unit cube. The scale starts at the observed
    sample variance of the responses (so that, with tau2 = 1, the implied
    observation-noise variance nu * tau2 also equals that sample variance).
    """
    var = 1.0
    if responses is not None:
        y = np.asarray(responses, dtype=float).ravel()
        if y.size >= 2:
            v = float(np.var(y, ddof=1))
            if v > 0 and np.isfinite(v):
                var = v
    return KernelParams(
        lengthscales=(math.sqrt(dim) / 2.0,) * dim,
        scale=var,
        noise=1.0,
    )


def kernel_value(a, b, params: KernelParams) -> float:
    """Squared-exponential correlation between two input points."""
    av = a.coords if isinstance(a, InputPoint) else np.asarray(a, dtype=float)
    bv = b.coords if isinstance(b, InputPoint) else np.asarray(b, dtype=float)
    ls = params.lengthscale_array()
    if av.shape != bv.shape or av.shape != ls.shape:
        raise ValueError(
            f"dimension mismatch: a has {av.shape}, b has {bv.shape}, "
            f"lengthscales have {ls.shape}"
        )
    d = (av - bv) / ls
    return float(np.exp(-0.5 * np.dot(d, d)))


def build_covariance(points, params: KernelParams) -> np.ndarray:
    """Covariance nu * (corr + tau2 * I) of the observations at ``points``."""
    x = as_input_matrix(points)
    if x.shape[1] != params.dim:
        raise ValueError("points and lengthscales disagree on dimension")
    k = kernels.self_correlation(x, params.lengthscale_array())
    k[np.diag_indices_from(k)] += params.noise
    cov = params.scale * k
    if not np.all(np.isfinite(cov)):
        raise NumericError("covariance contains non-finite entries")
    return cov


def _factor_correlation(k: np.ndarray):
    """Cholesky of a correlation-scale matrix, escalating jitter as needed.

    The factor is returned with its upper triangle zeroed: downstream code
    relies on that (dpotri passes the upper triangle of its input through to
    its output, and the gradient kernels assume symmetric weight matrices).
    """
    for jitter in _JITTERS:
        try:
            m = k if jitter == 0.0 else k + jitter * np.eye(len(k))
            c, low = cho_factor(m, lower=True, check_finite=False)
            return np.tril(c), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericError("covariance not positive definite after maximal jitter")


@dataclass(frozen=True)
class GPFit:
    """A fitted surface: training data, hyperparameters, and cached solves."""

    training: TrainingSet
    params: KernelParams
    mean: float
    converged: bool
    chol_corr: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)  # K^-1 (y - beta 1)
    kinv_one: np.ndarray = field(repr=False)  # K^-1 1
    one_kinv_one: float
    jitter: float
    lml: float

    @property
    def factorization(self) -> np.ndarray:
        """Lower-triangular factor of the observation covariance nu * K."""
        return math.sqrt(self.params.scale) * self.chol_corr

    @property
    def x(self) -> np.ndarray:
        return self.training.points

    @property
    def y(self) -> np.ndarray:
        return self.training.responses


def _corr_matrix(x: np.ndarray, params: KernelParams) -> np.ndarray:
    k = kernels.self_correlation(x, params.lengthscale_array())
    if params.noise:
        k = k + params.noise * np.eye(len(k))
    return k


def _fit_at(training: TrainingSet, params: KernelParams, converged: bool) -> GPFit:
    """Assemble a GPFit (factorization, GLS mean, solves, LML) at fixed params."""
    x, y = training.points, training.responses
    n = training.n
    k = _corr_matrix(x, params)
    chol, jitter = _factor_correlation(k)
    cf = (chol, True)
    ones = np.ones(n)
    kinv_one = cho_solve(cf, ones, check_finite=False)
    kinv_y = cho_solve(cf, y, check_finite=False)
    s11 = float(ones @ kinv_one)
    beta = float(ones @ kinv_y) / s11
    alpha = kinv_y - beta * kinv_one
    quad = float((y - beta) @ alpha)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    lml = -0.5 * (
        n * math.log(2.0 * math.pi) + n * math.log(params.scale) + logdet + quad / params.scale
    )
    return GPFit(
        training=training,
        params=params,
        mean=beta,
        converged=converged,
        chol_corr=chol,
        alpha=alpha,
        kinv_one=kinv_one,
        one_kinv_one=s11,
        jitter=jitter,
        lml=lml,
    )


def log_marginal_likelihood(training: TrainingSet, params: KernelParams) -> float:
    """Log density of the responses under N(beta_hat * 1, nu * K).

    The constant mean is profiled out via its generalized-least-squares
    estimate before the density is evaluated.
    """
    if training.dim != params.dim:
        raise ValueError("training set and lengthscales disagree on dimension")
    return _fit_at(training, params, converged=False).lml


def _lml_and_grad(x, y, log_params, corr_cache):
    """Value and gradient of the profiled LML w.r.t. log hyperparameters.

    log_params = (log l_1..l_d, log nu, log tau2). The GLS mean is optimal at
    every evaluation, so by the envelope theorem its dependence on the
    hyperparameters contributes nothing to the gradient.
    """
    d = x.shape[1]
    n = len(y)
    ls = np.exp(log_params[:d])
    nu = float(np.exp(log_params[d]))
    tau2 = float(np.exp(log_params[d + 1]))

    corr = kernels.self_correlation(x, ls)
    k = corr + tau2 * np.eye(n)
    chol, _ = _factor_correlation(k)
    cf = (chol, True)
    ones = np.ones(n)
    kinv_one = cho_solve(cf, ones, check_finite=False)
    kinv_y = cho_solve(cf, y, check_finite=False)
    s11 = float(ones @ kinv_one)
    beta = float(ones @ kinv_y) / s11
    alpha = kinv_y - beta * kinv_one
    quad = float((y - beta) @ alpha)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    lml = -0.5 * (n * math.log(2.0 * math.pi) + n * math.log(nu) + logdet + quad / nu)

    # K^-1 from the Cholesky factor (dpotri fills one triangle only).
    kinv, info = dpotri(chol, lower=True)
    if info != 0:
        raise NumericError("dpotri failed")
    kinv = kinv + np.tril(kinv, -1).T

    g = np.outer(alpha, alpha) / nu - kinv
    grad = np.empty(d + 2)
    grad[:d] = kernels.lengthscale_grad_terms(x, g, corr, ls)
    grad[d] = -0.5 * n + quad / (2.0 * nu)
    grad[d + 1] = 0.5 * tau2 * (float(alpha @ alpha) / nu - float(np.trace(kinv)))
    return lml, grad


def _lengthscale_box(x: np.ndarray) -> tuple:
    """Design-aware lengthscale bounds inside ``LENGTHSCALE_BOUNDS``.

    Replicates are collapsed; the box is anchored to quantiles of the
    pairwise distances among the unique design rows. The lower bound keeps
    the correlation at the ``_DIST_QUANTILE`` distance at least ``_NEAR_COR``
    (no independent-cell-means mode); the upper bound keeps the correlation
    at the opposite quantile at most ``_FAR_COR`` (no constant directions).
    Falls back to the outer box for degenerate designs.
    """
    lo_out, hi_out = LENGTHSCALE_BOUNDS
    uniq = np.unique(x, axis=0)
    if len(uniq) < 2:
        return lo_out, hi_out
    dists = pdist(uniq)
    d_lo, d_hi = np.quantile(dists, [_DIST_QUANTILE, 1.0 - _DIST_QUANTILE])
    lower = max(lo_out, float(d_lo) / math.sqrt(2.0 * math.log(1.0 / _NEAR_COR)))
    upper = min(hi_out, float(d_hi) / math.sqrt(2.0 * math.log(1.0 / _FAR_COR)))
    if not lower < upper:
        return lo_out, hi_out
    return lower, upper


def fit_hyperparameters(
    training: TrainingSet,
    init: KernelParams | None = None,
    budget: int = DEFAULT_FIT_BUDGET,
) -> GPFit:
    """Empirical-Bayes fit: maximize the profiled LML over the kernel box.

    Multistart L-BFGS-B on the log scale: one run from ``init`` plus
    perturbed restarts, with lengthscales constrained to the design-aware
    box. If every run fails, or none improves on the initialization, the
    initial values are kept and ``converged`` is False. Training sets
    smaller than ``N_MIN`` skip optimization entirely.
    """
    if init is None:
        init = initial_params(training.dim, training.responses)
    if training.dim != init.dim:
        raise ValueError("training set and lengthscales disagree on dimension")
    if training.n < N_MIN:
        return _fit_at(training, init, converged=False)

    vy = float(np.var(training.responses, ddof=1))
    if not np.isfinite(vy) or vy <= 0:
        vy = 1.0
    d = training.dim
    ls_lo, ls_hi = _lengthscale_box(training.points)
    lo = np.log(np.r_[[ls_lo] * d, SCALE_REL_BOUNDS[0] * vy, NOISE_BOUNDS[0]])
    hi = np.log(np.r_[[ls_hi] * d, SCALE_REL_BOUNDS[1] * vy, NOISE_BOUNDS[1]])
    theta0 = np.clip(
        np.log(np.r_[init.lengthscale_array(), init.scale, max(init.noise, NOISE_BOUNDS[0])]),
        lo,
        hi,
    )

    x, y = training.points, training.responses

    def objective(theta):
        try:
            lml, grad = _lml_and_grad(x, y, theta, None)
        except NumericError:
            return np.inf, np.zeros_like(theta)
        return -lml, -grad

    rng = np.random.default_rng(_RESTART_SEED)
    starts = [theta0]
    for _ in range(N_RESTARTS - 1):
        starts.append(np.clip(theta0 + rng.normal(0.0, 0.5, size=len(theta0)), lo, hi))

    best_theta, best_lml, best_success = None, -np.inf, False
    for start in starts:
        res = optimize.minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxfun": budget},
        )
        if np.isfinite(res.fun) and -res.fun > best_lml:
            best_theta, best_lml, best_success = res.x, -res.fun, bool(res.success)

    init_fit = _fit_at(training, init, converged=False)
    if best_theta is None or best_lml < init_fit.lml:
        return init_fit
    fitted = KernelParams(
        lengthscales=tuple(np.exp(best_theta[:d])),
        scale=float(np.exp(best_theta[d])),
        noise=float(np.exp(best_theta[d + 1])),
    )
    return _fit_at(training, fitted, converged=best_success)


def _variance_clamp(var: np.ndarray, scale: float) -> np.ndarray:
    tol = 1e-8 * max(1.0, scale)
    if np.any(var < -tol):
        raise NumericError(f"posterior variance fell below -{tol:g}")
    return np.maximum(var, 0.0)


def posterior_moments(fit: GPFit, queries) -> PosteriorMoments:
    """Latent-function posterior mean and variance at each query point.

    The prediction is for the noise-free surface (no tau2 in the query
    autocovariance); the variance includes the extra uncertainty from the
    estimated constant mean.
    """
    q = as_input_matrix(queries)
    if q.shape[0] == 0:
        raise ValueError("queries must be nonempty")
    if q.shape[1] != fit.params.dim:
        raise ValueError("queries and fit disagree on dimension")
    nu = fit.params.scale
    kx = kernels.cross_correlation(fit.x, q, fit.params.lengthscale_array())
    mean = fit.mean + kx.T @ fit.alpha
    v = cho_solve((fit.chol_corr, True), kx, check_finite=False)
    qterm = np.einsum("ij,ij->j", kx, v)
    h = 1.0 - kx.T @ fit.kinv_one
    var = nu * (1.0 - qterm + h * h / fit.one_kinv_one)
    return PosteriorMoments(mean=mean, variance=_variance_clamp(var, nu))


def _joint_posterior(fit: GPFit, q: np.ndarray):
    """Joint posterior mean vector and covariance matrix over query points."""
    nu = fit.params.scale
    ls = fit.params.lengthscale_array()
    kx = kernels.cross_correlation(fit.x, q, ls)
    kqq = kernels.self_correlation(q, ls)
    mean = fit.mean + kx.T @ fit.alpha
    v = cho_solve((fit.chol_corr, True), kx, check_finite=False)
    h = 1.0 - kx.T @ fit.kinv_one
    cov = nu * (kqq - kx.T @ v + np.outer(h, h) / fit.one_kinv_one)
    return mean, cov


def sample_posterior(fit: GPFit, queries, s: int, seed: int) -> np.ndarray:
    """Draw ``s`` joint samples of the latent surface over the query set.

    Duplicate query points are collapsed before factorizing the joint
    covariance, so perfectly correlated queries yield identical columns.
    Deterministic for a fixed seed.
    """
    if s < 1:
        raise ValueError("sample count must be >= 1")
    q = as_input_matrix(queries)
    if q.shape[1] != fit.params.dim:
        raise ValueError("queries and fit disagree on dimension")
    uniq, inverse = np.unique(q, axis=0, return_inverse=True)
    mean, cov = _joint_posterior(fit, uniq)

    root = None
    scale = max(float(np.max(np.diag(cov))), 1e-30)
    for jitter in _JITTERS:
        try:
            c, _ = cho_factor(cov + jitter * scale * np.eye(len(cov)), lower=True, check_finite=False)
            root = np.tril(c)
            break
        except np.linalg.LinAlgError:
            continue
    if root is None:
        # Semi-definite joint covariance: fall back to an eigenvalue root.
        w, u = np.linalg.eigh(cov)
        root = u * np.sqrt(np.maximum(w, 0.0))

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((s, len(uniq)))
    draws = mean + z @ root.T
    return draws[:, inverse]
