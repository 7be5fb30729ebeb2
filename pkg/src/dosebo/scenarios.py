"""Ground-truth response surfaces and noisy patient-response generation.

Two surface families cover the built-in scenarios: signed bivariate normal
densities ("bumps") over the standardized dose square, and degree-2x2
polynomials in the two dose coordinates. Surfaces are indexed by the true
patient stratum; noise is additive Gaussian per response.

The obstructive-sleep-apnea scenario uses the polynomial family. Its
coefficient vectors are applied to the monomials in the order
(1, d1, d2, d1*d2, d1^2, d2^2, d1^2*d2^2) on doses standardized to the unit
square (aroxybutynin 0/2.5/5 mg -> 0/0.5/1, atomoxetine 75 mg -> 1). The
reference optima below are the grid argmins of efficacy subject to the
stratum's toxicity cap; their surface values match the published summary
table to two decimals, while that table's original-unit dose labels do not
map onto the standardized grid under any ordering or standardization we
evaluated (see the repository notes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

# monomial exponents (p, q) for d1^p * d2^q, matching coefficient order
POLY_BASIS = ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 2))

AE_TYPES = (
    "dry mouth", "insomnia", "urinary hesitation", "constipation",
    "nausea", "decreased appetite", "feeling jittery", "somnolence",
)


@dataclass(frozen=True)
class SurfaceSpec:
    """One response surface per stratum.

    kind "gaussian_bump": params[k] = (sign, mean, cov) and the value is
    sign * N(mean, cov) density at the dose. kind "polynomial": params[k] is
    a 7-coefficient vector over POLY_BASIS.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in ("gaussian_bump", "polynomial"):
            raise ValueError("unknown surface kind %r" % self.kind)
        if not self.params:
            raise ValueError("at least one stratum's parameters required")
        if self.kind == "polynomial":
            coefs = tuple(tuple(float(c) for c in p) for p in self.params)
            if any(len(c) != len(POLY_BASIS) for c in coefs):
                raise ValueError("polynomial surfaces need %d coefficients" % len(POLY_BASIS))
            object.__setattr__(self, "params", coefs)
        else:
            parsed = []
            for sign, mean, cov in self.params:
                mean = np.asarray(mean, dtype=float)
                cov = np.asarray(cov, dtype=float)
                if cov.shape != (len(mean), len(mean)) or not np.allclose(cov, cov.T):
                    raise ValueError("bump covariance must be symmetric")
                if np.any(np.linalg.eigvalsh(cov) <= 0):
                    raise ValueError("bump covariance must be positive definite")
                parsed.append((float(sign), mean, cov))
            object.__setattr__(self, "params", tuple(parsed))

    @property
    def n_strata(self) -> int:
        return len(self.params)


@dataclass(frozen=True)
class OptimumRecord:
    """Reference truth for one stratum: constrained optimum and effect sizes."""

    stratum: int
    dose: tuple
    f_opt: float
    g_opt: float
    ses_f: float
    ses_g: float


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    covariates: tuple
    efficacy: SurfaceSpec
    toxicity: SurfaceSpec
    noise_sd_f: float
    noise_sd_g: float
    optima: tuple = ()

    def __post_init__(self):
        if self.noise_sd_f <= 0 or self.noise_sd_g <= 0:
            raise ValueError("noise standard deviations must be positive")
        covs = tuple(tuple(float(v) for v in z) for z in self.covariates)
        object.__setattr__(self, "covariates", covs)
        need = len(covs)
        if self.efficacy.n_strata != need or self.toxicity.n_strata != need:
            raise ValueError("surfaces must define one parameter set per stratum")

    @property
    def n_strata(self) -> int:
        return len(self.covariates)


@dataclass(frozen=True)
class AEWeights:
    type_weights: tuple
    grade_weights: tuple
    grade_probabilities: tuple

    def __post_init__(self):
        tw = tuple(float(v) for v in self.type_weights)
        gw = tuple(float(v) for v in self.grade_weights)
        gp = tuple(float(v) for v in self.grade_probabilities)
        if any(v <= 0 for v in tw) or any(v <= 0 for v in gw):
            raise ValueError("weights must be positive")
        if len(gw) != len(gp) or abs(sum(gp) - 1.0) > 1e-12:
            raise ValueError("grade probabilities must match grades and sum to 1")
        object.__setattr__(self, "type_weights", tw)
        object.__setattr__(self, "grade_weights", gw)
        object.__setattr__(self, "grade_probabilities", gp)


DEFAULT_AE_WEIGHTS = AEWeights(
    type_weights=(5, 5, 1, 1, 5, 1, 1, 1),
    grade_weights=(1, 2, 3),
    grade_probabilities=(0.10, 0.45, 0.45),
)


def eval_surface_grid(spec: SurfaceSpec, doses, stratum: int) -> np.ndarray:
    """Surface values at each dose row for one stratum."""
    d = np.atleast_2d(np.asarray(doses, dtype=float))
    if not (0 <= stratum < spec.n_strata):
        raise ValueError("no stratum %d in surface" % stratum)
    if spec.kind == "gaussian_bump":
        sign, mean, cov = spec.params[stratum]
        return sign * multivariate_normal(mean=mean, cov=cov).pdf(d).reshape(-1)
    coefs = np.asarray(spec.params[stratum])
    cols = np.stack([d[:, 0] ** p * d[:, 1] ** q for p, q in POLY_BASIS], axis=1)
    return cols @ coefs


def eval_surface(spec: SurfaceSpec, dose, stratum: int) -> float:
    return float(eval_surface_grid(spec, [dose], stratum)[0])


def generate_response(
    scenario: ScenarioSpec, dose, stratum: int, rng: np.random.Generator
) -> tuple:
    """One patient's noisy (y_f, y_g) pair at a dose."""
    y_f = eval_surface(scenario.efficacy, dose, stratum) + rng.normal(0.0, scenario.noise_sd_f)
    y_g = eval_surface(scenario.toxicity, dose, stratum) + rng.normal(0.0, scenario.noise_sd_g)
    return (float(y_f), float(y_g))


def ae_burden_score(events, weights: AEWeights = DEFAULT_AE_WEIGHTS) -> float:
    """Weighted adverse-event burden: sum of type weight x grade weight.

    ``events`` lists (type, grade) pairs with 1-based indices into the eight
    AE types and three grades.
    """
    total = 0.0
    for c, g in events:
        if not (1 <= c <= len(weights.type_weights)):
            raise ValueError("AE type index %r out of range" % (c,))
        if not (1 <= g <= len(weights.grade_weights)):
            raise ValueError("AE grade %r out of range" % (g,))
        total += weights.type_weights[c - 1] * weights.grade_weights[g - 1]
    return total


def burden_to_toxicity(burden: float) -> float:
    """Log transform linking AE burden to the toxicity response scale."""
    if burden < 0:
        raise ValueError("burden must be nonnegative")
    return math.log(burden + 0.5)


def toxicity_to_burden(g: float) -> float:
    """Average AE burden a toxicity threshold tolerates (inverse transform)."""
    return math.exp(g) - 0.5


# mode height of a symmetric bivariate normal with variance 0.1
_BUMP_PEAK = 1.0 / (2.0 * math.pi * 0.1)
_BUMP_COV = ((0.1, 0.0), (0.0, 0.1))

_OSA_BETA = (
    (-1.38, -4.08, -0.48, -4.23, 2.45, -7.51, -1.56),
    (1.05, -11.28, -8.32, -17.02, 8.17, 2.34, 4.61),
)
_OSA_THETA = (-0.59, 1.83, 2.26, -4.05, 1.79, 0.47, 2.91)
OSA_TOXICITY_THRESHOLDS = (1.5, 2.0)


def _bump(sign: float, mean) -> tuple:
    return (sign, tuple(mean), _BUMP_COV)


def _scenario1() -> ScenarioSpec:
    return ScenarioSpec(
        name="scenario1",
        covariates=((0.0,), (1.0,)),
        efficacy=SurfaceSpec("gaussian_bump", (_bump(-1, (0.5, 0.5)), _bump(-1, (0.5, 0.5)))),
        toxicity=SurfaceSpec("gaussian_bump", (_bump(+1, (1.0, 1.0)), _bump(+1, (1.0, 1.0)))),
        noise_sd_f=_BUMP_PEAK,
        noise_sd_g=_BUMP_PEAK * math.exp(-2.5),
        optima=(
            OptimumRecord(0, (0.5, 0.5), -_BUMP_PEAK, _BUMP_PEAK * math.exp(-2.5), 1.0, 1.0),
            OptimumRecord(1, (0.5, 0.5), -_BUMP_PEAK, _BUMP_PEAK * math.exp(-2.5), 1.0, 1.0),
        ),
    )


def _scenario2() -> ScenarioSpec:
    return ScenarioSpec(
        name="scenario2",
        covariates=((0.0,), (1.0,)),
        efficacy=SurfaceSpec(
            "gaussian_bump", (_bump(-1, (0.25, 0.75)), _bump(-1, (0.75, 0.25)))
        ),
        toxicity=SurfaceSpec(
            "gaussian_bump", (_bump(+1, (0.75, 1.25)), _bump(+1, (1.25, 0.75)))
        ),
        noise_sd_f=_BUMP_PEAK,
        noise_sd_g=_BUMP_PEAK * math.exp(-2.5),
        optima=(
            OptimumRecord(0, (0.25, 0.75), -_BUMP_PEAK, _BUMP_PEAK * math.exp(-2.5), 1.0, 1.0),
            OptimumRecord(1, (0.75, 0.25), -_BUMP_PEAK, _BUMP_PEAK * math.exp(-2.5), 1.0, 1.0),
        ),
    )


def _osa() -> ScenarioSpec:
    eff = SurfaceSpec("polynomial", _OSA_BETA)
    tox = SurfaceSpec("polynomial", (_OSA_THETA, _OSA_THETA))
    # grid argmins of f under the per-stratum toxicity caps (1.5 / 2.0)
    optima = []
    grid = np.array([(a / 4, b / 4) for a in range(5) for b in range(5)])
    for k, cap in enumerate(OSA_TOXICITY_THRESHOLDS):
        f_vals = eval_surface_grid(eff, grid, k)
        g_vals = eval_surface_grid(tox, grid, k)
        feasible = g_vals <= cap
        idx = np.flatnonzero(feasible)[np.argmin(f_vals[feasible])]
        optima.append(
            OptimumRecord(
                k, tuple(float(v) for v in grid[idx]), float(f_vals[idx]), float(g_vals[idx]),
                ses_f=abs(float(f_vals[idx])) / 7.68,
                ses_g=float(g_vals[idx]) / 1.29,
            )
        )
    return ScenarioSpec(
        name="osa",
        covariates=((0.0,), (1.0,)),
        efficacy=eff,
        toxicity=tox,
        noise_sd_f=7.68,
        noise_sd_g=1.29,
        optima=tuple(optima),
    )


_BUILTIN = {"scenario1": _scenario1, "scenario2": _scenario2, "osa": _osa}


def scenario_names() -> tuple:
    return tuple(sorted(_BUILTIN))


def builtin_scenario(name: str) -> ScenarioSpec:
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise KeyError(
            "unknown scenario %r; available: %s" % (name, ", ".join(scenario_names()))
        ) from None
