"""Constrained Expected Improvement over a finite candidate grid.

Safety is the posterior probability that the toxicity surface stays at or
below a stratum threshold; the acquisition multiplies classic Expected
Improvement on the efficacy surface by that probability. Everything operates
on candidate dose grids (continuous maximization is out of scope).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .gp import GPFit, posterior_moments, sample_posterior

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class SafetySpec:
    """Toxicity threshold (response units) and required safety confidence."""

    threshold: float
    confidence: float = 0.9

    def __post_init__(self):
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must lie strictly between 0 and 1")


@dataclass(frozen=True)
class CandidateSet:
    """Dose vectors under consideration for one stratum.

    ``covariates`` are the stratum's standardized covariate levels; they are
    appended to every dose to form the surrogate's input coordinates.
    """

    doses: np.ndarray
    stratum: int = 0
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.doses, dtype=float))
        if d.size == 0:
            raise ValueError("candidate set must be nonempty")
        object.__setattr__(self, "doses", d)
        object.__setattr__(self, "covariates", tuple(float(v) for v in self.covariates))

    def inputs(self) -> np.ndarray:
        """Candidate coordinates in the surrogate's input space."""
        n = len(self.doses)
        if not self.covariates:
            return self.doses
        z = np.tile(np.asarray(self.covariates, dtype=float), (n, 1))
        return np.hstack([self.doses, z])

    def restrict(self, mask: np.ndarray) -> "CandidateSet":
        return CandidateSet(self.doses[mask], self.stratum, self.covariates)


@dataclass(frozen=True)
class AcquisitionResult:
    best_dose: np.ndarray
    best_value: float
    incumbent: float
    safe_set: np.ndarray
    fallback_used: bool
    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class PosteriorOptimalDoses:
    """Per-sample optimal doses; rows with no feasible candidate are NaN."""

    doses: np.ndarray
    feasible: np.ndarray

    def __len__(self) -> int:
        return len(self.feasible)


def _lex_rank(doses: np.ndarray) -> np.ndarray:
    """Position of each row in the lexicographic ordering of the rows."""
    order = np.lexsort(doses.T[::-1])
    rank = np.empty(len(doses), dtype=int)
    rank[order] = np.arange(len(doses))
    return rank


def _argmin_lex(values: np.ndarray, doses: np.ndarray) -> int:
    """Index of the smallest value; ties go to the lexicographically lowest dose."""
    best = values.min()
    tied = np.flatnonzero(values == best)
    if len(tied) == 1:
        return int(tied[0])
    return int(tied[np.argmin(_lex_rank(doses)[tied])])


def _argmax_lex(values: np.ndarray, doses: np.ndarray) -> int:
    return _argmin_lex(-values, doses)


def safety_probabilities(g_fit: GPFit, inputs: np.ndarray, threshold: float) -> np.ndarray:
    """P(toxicity <= threshold) at each input row, from the posterior of g."""
    pm = posterior_moments(g_fit, inputs)
    sd = np.sqrt(pm.variance)
    out = np.empty(len(sd))
    pos = sd > 0
    out[pos] = ndtr((threshold - pm.mean[pos]) / sd[pos])
    out[~pos] = (pm.mean[~pos] <= threshold).astype(float)
    return out


def safety_probability(g_fit: GPFit, dose, threshold: float) -> float:
    """Scalar version of :func:`safety_probabilities` for a single input."""
    from .gp import as_input_matrix

    return float(safety_probabilities(g_fit, as_input_matrix([dose]), threshold)[0])


def safe_set(g_fit: GPFit, candidates: CandidateSet, spec: SafetySpec) -> np.ndarray:
    """Candidate doses whose safety probability strictly exceeds the confidence."""
    probs = safety_probabilities(g_fit, candidates.inputs(), spec.threshold)
    return candidates.doses[probs > spec.confidence]


def incumbent(
    f_fit: GPFit,
    g_fit: GPFit,
    candidates: CandidateSet,
    spec: SafetySpec,
) -> tuple[float, bool]:
    """Current best efficacy value f*.

    The minimum posterior mean of f over the safe candidates; when none are
    safe, the posterior mean of f at the candidate predicted to be safest
    (ties broken toward the lower mean, then the lower dose).
    """
    inputs = candidates.inputs()
    mu_f = posterior_moments(f_fit, inputs).mean
    probs = safety_probabilities(g_fit, inputs, spec.threshold)
    safe = probs > spec.confidence
    if np.any(safe):
        return float(mu_f[safe].min()), False
    top = probs == probs.max()
    return float(mu_f[top].min()), True


def ei_values(mu_f: np.ndarray, sd_f: np.ndarray, best: float) -> np.ndarray:
    """Expected improvement of a N(mu, sd^2) value over ``best`` (minimization)."""
    mu_f = np.asarray(mu_f, dtype=float)
    sd_f = np.asarray(sd_f, dtype=float)
    out = np.maximum(best - mu_f, 0.0)
    pos = sd_f > 0
    if np.any(pos):
        u = (best - mu_f[pos]) / sd_f[pos]
        out[pos] = (best - mu_f[pos]) * ndtr(u) + sd_f[pos] * np.exp(-0.5 * u * u) / _SQRT_2PI
    return np.maximum(out, 0.0)


def cei_values(
    mu_f: np.ndarray,
    sd_f: np.ndarray,
    mu_g: np.ndarray,
    sd_g: np.ndarray,
    best: float,
    threshold: float,
) -> np.ndarray:
    """Closed-form constrained EI from the four posterior moment vectors."""
    mu_g = np.asarray(mu_g, dtype=float)
    sd_g = np.asarray(sd_g, dtype=float)
    safety = np.where(sd_g > 0, ndtr((threshold - mu_g) / np.where(sd_g > 0, sd_g, 1.0)),
                      (mu_g <= threshold).astype(float))
    return ei_values(mu_f, sd_f, best) * safety


def constrained_ei(
    f_fit: GPFit,
    g_fit: GPFit,
    dose,
    incumbent_value: float,
    threshold: float,
) -> float:
    """Constrained EI at a single input point."""
    from .gp import as_input_matrix

    x = as_input_matrix([dose])
    pf = posterior_moments(f_fit, x)
    pg = posterior_moments(g_fit, x)
    return float(
        cei_values(
            pf.mean, np.sqrt(pf.variance), pg.mean, np.sqrt(pg.variance),
            incumbent_value, threshold,
        )[0]
    )


def select_next_dose(
    f_fit: GPFit,
    g_fit: GPFit,
    candidates: CandidateSet,
    spec: SafetySpec,
) -> AcquisitionResult:
    """Maximize constrained EI over the candidate set.

    The incumbent is computed from the same candidates. Ties on the
    acquisition value go to the lexicographically lowest dose vector, which
    makes the choice invariant to candidate ordering.
    """
    inputs = candidates.inputs()
    pf = posterior_moments(f_fit, inputs)
    pg = posterior_moments(g_fit, inputs)
    probs = safety_probabilities(g_fit, inputs, spec.threshold)
    safe = probs > spec.confidence
    if np.any(safe):
        best_f, fallback = float(pf.mean[safe].min()), False
    else:
        top = probs == probs.max()
        best_f, fallback = float(pf.mean[top].min()), True
    values = cei_values(
        pf.mean, np.sqrt(pf.variance), pg.mean, np.sqrt(pg.variance), best_f, spec.threshold
    )
    idx = _argmax_lex(values, candidates.doses)
    return AcquisitionResult(
        best_dose=candidates.doses[idx].copy(),
        best_value=float(values[idx]),
        incumbent=best_f,
        safe_set=candidates.doses[safe],
        fallback_used=fallback,
        values=values,
    )


@dataclass(frozen=True)
class GridSummary:
    """One-pass snapshot of the acquisition state over a candidate grid."""

    point_estimate: np.ndarray | None
    mean_at_estimate: float | None
    sd_at_estimate: float | None
    incumbent: float
    fallback_used: bool
    max_cei: float
    best_dose: np.ndarray
    safe_set_size: int


def summarize_grid(
    f_fit: GPFit,
    g_fit: GPFit,
    candidates: CandidateSet,
    spec: SafetySpec,
) -> GridSummary:
    """Point estimate, its posterior moments, and the cEI maximum, together.

    Shares the posterior evaluations that select_next_dose and
    point_estimate_optimum would otherwise each redo.
    """
    inputs = candidates.inputs()
    pf = posterior_moments(f_fit, inputs)
    pg = posterior_moments(g_fit, inputs)
    probs = safety_probabilities(g_fit, inputs, spec.threshold)
    safe = probs > spec.confidence
    if np.any(safe):
        best_f, fallback = float(pf.mean[safe].min()), False
    else:
        top = probs == probs.max()
        best_f, fallback = float(pf.mean[top].min()), True
    values = cei_values(
        pf.mean, np.sqrt(pf.variance), pg.mean, np.sqrt(pg.variance), best_f, spec.threshold
    )
    best_idx = _argmax_lex(values, candidates.doses)
    if np.any(safe):
        safe_idx = np.flatnonzero(safe)
        pick = safe_idx[_argmin_lex(pf.mean[safe_idx], candidates.doses[safe_idx])]
        point = candidates.doses[pick].copy()
        mean_at = float(pf.mean[pick])
        sd_at = float(np.sqrt(pf.variance[pick]))
    else:
        point, mean_at, sd_at = None, None, None
    return GridSummary(
        point_estimate=point,
        mean_at_estimate=mean_at,
        sd_at_estimate=sd_at,
        incumbent=best_f,
        fallback_used=fallback,
        max_cei=float(values[best_idx]),
        best_dose=candidates.doses[best_idx].copy(),
        safe_set_size=int(np.count_nonzero(safe)),
    )


def point_estimate_optimum(
    f_fit: GPFit,
    g_fit: GPFit,
    candidates: CandidateSet,
    spec: SafetySpec,
) -> np.ndarray | None:
    """Safe dose minimizing the posterior mean of f; None if nothing is safe."""
    inputs = candidates.inputs()
    mu_f = posterior_moments(f_fit, inputs).mean
    probs = safety_probabilities(g_fit, inputs, spec.threshold)
    safe = probs > spec.confidence
    if not np.any(safe):
        return None
    idx = _argmin_lex(mu_f[safe], candidates.doses[safe])
    return candidates.doses[safe][idx].copy()


def posterior_optimal_dose(
    f_fit: GPFit,
    g_fit: GPFit,
    candidates: CandidateSet,
    spec: SafetySpec,
    s: int,
    seed,
) -> PosteriorOptimalDoses:
    """Samples from the posterior of the optimal dose.

    For each joint draw (f, g) over the candidates, the admissible set is the
    event {g(d) <= threshold} along that sample path; the draw's optimum is
    the feasible dose minimizing the sampled f. Draws with an empty
    admissible set are flagged infeasible. f and g are sampled jointly across
    candidates but independently of each other.
    """
    if s < 1:
        raise ValueError("sample count must be >= 1")
    inputs = candidates.inputs()
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    seed_f, seed_g = seed.spawn(2)
    f_draws = sample_posterior(f_fit, inputs, s, seed_f)
    g_draws = sample_posterior(g_fit, inputs, s, seed_g)

    # Walk candidates in lexicographic dose order so argmin tie-breaks match
    # the deterministic rule used everywhere else.
    order = np.lexsort(candidates.doses.T[::-1])
    doses_sorted = candidates.doses[order]
    feasible_mask = g_draws[:, order] <= spec.threshold
    any_feasible = feasible_mask.any(axis=1)
    masked = np.where(feasible_mask, f_draws[:, order], np.inf)
    winners = masked.argmin(axis=1)

    out = np.full((s, candidates.doses.shape[1]), np.nan)
    out[any_feasible] = doses_sorted[winners[any_feasible]]
    return PosteriorOptimalDoses(doses=out, feasible=any_feasible)
