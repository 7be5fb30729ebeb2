"""Per-stratum dose-finding loop: observe, refit, stop-check, select.

The engine threads an immutable TrialState through submissions. Surrogates
for efficacy and toxicity are refit on the pooled data of all strata (dose
coordinates plus the stratum's covariate levels), which is what lets a
personalized trial borrow strength across covariate patterns. A standard,
covariate-free trial is the K=1 special case of the same code path.

Stopping rules are evaluated per stratum after each of its cohorts, in the
order toxicity, then efficacy, then budget. Each rule uses a counter of
consecutive violations; a stratum stops when its counter reaches
``consecutive_required`` (J+1 by default). Terminal strata release their
unspent budget to the strata still active.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import escalation
from .acquisition import (
    CandidateSet,
    PosteriorOptimalDoses,
    SafetySpec,
    point_estimate_optimum,
    posterior_optimal_dose,
    safety_probabilities,
    select_next_dose,
)
from .gp import DEFAULT_FIT_BUDGET, GPFit, TrainingSet, fit_hyperparameters


class ConfigurationError(ValueError):
    """The trial configuration violates a structural constraint."""


class ContractViolation(ValueError):
    """A submission contradicts the pending assignment or batch contract."""


class StateError(RuntimeError):
    """An operation was attempted in a state that does not admit it."""


class StratumStatus(str, enum.Enum):
    ACTIVE = "active"
    STOPPED_EFFICACY = "stopped_efficacy"
    STOPPED_TOXICITY = "stopped_toxicity"
    BUDGET_EXHAUSTED = "budget_exhausted"


def _per_stratum(value, k: int, name: str) -> tuple:
    """Broadcast a scalar to K strata or validate a length-K sequence."""
    if np.isscalar(value):
        return (value,) * k
    out = tuple(value)
    if len(out) != k:
        raise ConfigurationError("%s must be a scalar or have one entry per stratum" % name)
    return out


@dataclass(frozen=True)
class TrialConfig:
    """Static description of one trial.

    ``strata`` lists the covariate pattern of each stratum; a single empty
    pattern gives the standard (non-personalized) algorithm. Per-stratum
    settings accept a scalar (applied to all strata) or a length-K sequence.
    ``initial_doses`` replaces the escalation run-in with an explicit dose
    queue per stratum (used to study the value of escalation); in that mode
    the region starts fully expanded.
    """

    candidate_grid: np.ndarray
    max_patients: int
    strata: tuple = ((),)
    toxicity_threshold: tuple = 0.5
    safety_confidence: tuple = 0.9
    efficacy_stop_threshold: tuple = 0.0
    replication: tuple = 2
    rate: tuple = 0.25
    exclusion_side: tuple = 0.0
    consecutive_required: int = 0
    toxicity_stop_confidence: float = 0.9
    escalate: bool = True
    initial_doses: tuple | None = None
    fit_budget: int = DEFAULT_FIT_BUDGET

    def __post_init__(self):
        grid = np.atleast_2d(np.asarray(self.candidate_grid, dtype=float))
        if grid.size == 0:
            raise ConfigurationError("candidate grid must be nonempty")
        if np.any(grid < 0.0) or np.any(grid > 1.0):
            raise ConfigurationError("candidate doses must lie in the unit cube")
        object.__setattr__(self, "candidate_grid", grid)

        strata = tuple(tuple(float(v) for v in z) for z in self.strata)
        if not strata:
            raise ConfigurationError("at least one stratum is required")
        if len(set(len(z) for z in strata)) != 1:
            raise ConfigurationError("all covariate patterns must have the same length")
        if len(set(strata)) != len(strata):
            raise ConfigurationError("covariate patterns must be distinct")
        object.__setattr__(self, "strata", strata)

        k = len(strata)
        for name in ("toxicity_threshold", "safety_confidence", "efficacy_stop_threshold",
                     "replication", "rate", "exclusion_side"):
            object.__setattr__(self, name, _per_stratum(getattr(self, name), k, name))
        object.__setattr__(self, "replication", tuple(int(r) for r in self.replication))

        if any(r < 1 for r in self.replication):
            raise ConfigurationError("replication must be >= 1 per stratum")
        if any(d < 0 for d in self.efficacy_stop_threshold):
            raise ConfigurationError("efficacy stop threshold must be nonnegative")
        if any(not (0 < c < 1) for c in self.safety_confidence):
            raise ConfigurationError("safety confidence must lie in (0, 1)")
        if not (0 < self.toxicity_stop_confidence < 1):
            raise ConfigurationError("toxicity stop confidence must lie in (0, 1)")
        if self.max_patients < sum(self.replication):
            raise ConfigurationError("budget below one cohort per stratum")
        if self.consecutive_required == 0:
            object.__setattr__(self, "consecutive_required", self.dims + 1)
        if self.consecutive_required < 1:
            raise ConfigurationError("consecutive_required must be >= 1")

        if self.escalate:
            if self.initial_doses is not None:
                raise ConfigurationError("initial_doses requires escalate=False")
            zero = np.zeros(self.dims)
            if not any(np.array_equal(row, zero) for row in grid):
                raise ConfigurationError("escalation requires the zero dose in the grid")
        else:
            if self.initial_doses is None:
                raise ConfigurationError("escalate=False requires initial_doses")
            queues = tuple(
                tuple(tuple(float(v) for v in d) for d in q) for q in self.initial_doses
            )
            if len(queues) != k or any(len(q) == 0 for q in queues):
                raise ConfigurationError("initial_doses needs a nonempty queue per stratum")
            for q in queues:
                for d in q:
                    if len(d) != self.dims:
                        raise ConfigurationError("initial dose has wrong dimension")
            object.__setattr__(self, "initial_doses", queues)

    @property
    def dims(self) -> int:
        return self.candidate_grid.shape[1]

    @property
    def n_strata(self) -> int:
        return len(self.strata)

    def region_spec(self, stratum: int) -> escalation.RegionSpec:
        return escalation.RegionSpec(
            dims=self.dims,
            rate=self.rate[stratum],
            exclusion_side=self.exclusion_side[stratum],
        )

    def safety_spec(self, stratum: int) -> SafetySpec:
        return SafetySpec(
            threshold=self.toxicity_threshold[stratum],
            confidence=self.safety_confidence[stratum],
        )

    def candidates(self, stratum: int) -> CandidateSet:
        return CandidateSet(self.candidate_grid, stratum, self.strata[stratum])


@dataclass(frozen=True)
class StratumState:
    index: int
    region: escalation.RegionState
    status: StratumStatus = StratumStatus.ACTIVE
    pending: tuple | None = None
    queued: tuple = ()
    observations: tuple = ()
    efficacy_counter: int = 0
    toxicity_counter: int = 0
    patients_used: int = 0
    allocation: int = 0

    @property
    def active(self) -> bool:
        return self.status is StratumStatus.ACTIVE


@dataclass(frozen=True)
class ObservationBatch:
    """One cohort's responses: r_k (y_f, y_g) pairs at the pending dose."""

    stratum: int
    dose: tuple
    responses: tuple

    def __post_init__(self):
        object.__setattr__(self, "dose", tuple(float(v) for v in self.dose))
        resp = tuple((float(a), float(b)) for a, b in self.responses)
        if not all(math.isfinite(a) and math.isfinite(b) for a, b in resp):
            raise ContractViolation("responses must be finite")
        object.__setattr__(self, "responses", resp)


@dataclass(frozen=True)
class Recommendation:
    stratum: int
    point_estimate: np.ndarray | None
    posterior_samples: PosteriorOptimalDoses
    incumbent: float | None
    max_cei: float | None
    safe_set_size: int


@dataclass(frozen=True)
class TrialState:
    config: TrialConfig
    strata: tuple
    f_fit: GPFit | None = None
    g_fit: GPFit | None = None
    events: tuple = ()

    @property
    def complete(self) -> bool:
        return not any(s.active for s in self.strata)

    def stratum(self, index: int) -> StratumState:
        if not (0 <= index < len(self.strata)):
            raise ContractViolation("no stratum with index %d" % index)
        return self.strata[index]

    def total_patients(self) -> int:
        return sum(s.patients_used for s in self.strata)

    def _with_event(self, kind: str, **payload) -> "TrialState":
        event = {"sequence": len(self.events), "kind": kind, "payload": payload}
        return replace(self, events=self.events + (event,))

    def _set_stratum(self, st: StratumState) -> "TrialState":
        strata = list(self.strata)
        strata[st.index] = st
        return replace(self, strata=tuple(strata))


def _initial_allocations(config: TrialConfig) -> list:
    """Every stratum is guaranteed its first cohort; the surplus is split
    evenly with the remainder going to the lowest indices."""
    k = config.n_strata
    alloc = list(config.replication)
    surplus = config.max_patients - sum(alloc)
    alloc = [a + surplus // k for a in alloc]
    for i in range(surplus % k):
        alloc[i] += 1
    return alloc


def start_trial(config: TrialConfig) -> TrialState:
    """Fresh trial: every stratum active with its first dose pending.

    Under escalation the first dose is the zero vector and the region starts
    at iteration 0; with an explicit initial-dose queue the region starts
    fully expanded and the queue drives the run-in.
    """
    alloc = _initial_allocations(config)
    strata = []
    for k in range(config.n_strata):
        spec = config.region_spec(k)
        if config.escalate:
            region = escalation.RegionState(spec)
            pending = (0.0,) * config.dims
            queued = ()
        else:
            start_iter = math.ceil(sum(spec.weights) / spec.rate)
            region = escalation.RegionState(spec, iteration=start_iter)
            pending = config.initial_doses[k][0]
            queued = config.initial_doses[k][1:]
        strata.append(
            StratumState(index=k, region=region, pending=pending, queued=queued,
                         allocation=alloc[k])
        )
    state = TrialState(config=config, strata=tuple(strata))
    state = state._with_event(
        "trial_created",
        strata=[list(z) for z in config.strata],
        max_patients=config.max_patients,
        grid_size=len(config.candidate_grid),
    )
    for st in state.strata:
        state = state._with_event(
            "dose_assigned", stratum=st.index, dose=list(st.pending), iteration=0
        )
    return state


def _pooled_training(state: TrialState) -> tuple:
    rows, yf, yg = [], [], []
    for st in state.strata:
        covs = state.config.strata[st.index]
        for dose, f, g in st.observations:
            rows.append(tuple(dose) + covs)
            yf.append(f)
            yg.append(g)
    x = np.asarray(rows, dtype=float)
    return (
        TrainingSet.from_points(x, np.asarray(yf)),
        TrainingSet.from_points(x, np.asarray(yg)),
    )


def _refit(state: TrialState) -> TrialState:
    train_f, train_g = _pooled_training(state)
    f_fit = fit_hyperparameters(train_f, budget=state.config.fit_budget)
    g_fit = fit_hyperparameters(train_g, budget=state.config.fit_budget)
    state = replace(state, f_fit=f_fit, g_fit=g_fit)
    for name, fit in (("f", f_fit), ("g", g_fit)):
        state = state._with_event(
            "fit_updated", surface=name, n=fit.training.n,
            lml=fit.lml, converged=fit.converged,
            lengthscales=list(fit.params.lengthscales),
            scale=fit.params.scale, noise=fit.params.noise,
        )
    return state


def check_toxicity_stop(state: TrialState, index: int) -> TrialState:
    """No candidate on the full grid is safe with the required confidence."""
    st = state.stratum(index)
    cands = state.config.candidates(index)
    probs = safety_probabilities(
        state.g_fit, cands.inputs(), state.config.toxicity_threshold[index]
    )
    violated = bool(np.all(probs < state.config.toxicity_stop_confidence))
    counter = st.toxicity_counter + 1 if violated else 0
    st = replace(st, toxicity_counter=counter)
    if counter >= state.config.consecutive_required:
        st = replace(st, status=StratumStatus.STOPPED_TOXICITY, pending=None, queued=())
        state = state._set_stratum(st)
        return state._with_event(
            "stop_triggered", stratum=index, reason="toxicity", counter=counter
        )
    return state._set_stratum(st)


def _response_scale(state: TrialState) -> float:
    """Sample SD of the pooled efficacy responses.

    The delta thresholds for the efficacy stop are calibrated on
    variance-standardized responses; on the raw scale the expected
    improvement at a repeatedly sampled dose is floored near
    0.4 * (noise SD / sqrt(replicates)) and high-noise settings could
    never stop early.
    """
    y = state.f_fit.training.responses
    if len(y) < 2:
        return 1.0
    s = float(np.std(y, ddof=1))
    return s if np.isfinite(s) and s > 0 else 1.0


def check_efficacy_stop(state: TrialState, index: int, max_cei: float) -> TrialState:
    """Best achievable constrained EI over the full grid fell below delta."""
    st = state.stratum(index)
    delta = state.config.efficacy_stop_threshold[index]
    violated = max_cei < delta
    counter = st.efficacy_counter + 1 if violated else 0
    st = replace(st, efficacy_counter=counter)
    if counter >= state.config.consecutive_required:
        st = replace(st, status=StratumStatus.STOPPED_EFFICACY, pending=None, queued=())
        state = state._set_stratum(st)
        return state._with_event(
            "stop_triggered", stratum=index, reason="efficacy", counter=counter
        )
    return state._set_stratum(st)


def reallocate_budget(state: TrialState, from_stratum: int) -> TrialState:
    """Hand a terminal stratum's unspent allocation to the active strata."""
    st = state.stratum(from_stratum)
    unspent = st.allocation - st.patients_used
    active = [s.index for s in state.strata if s.active]
    if unspent <= 0 or not active:
        return state
    state = state._set_stratum(replace(st, allocation=st.patients_used))
    share, extra = divmod(unspent, len(active))
    grants = {}
    for pos, idx in enumerate(sorted(active)):
        grant = share + (1 if pos < extra else 0)
        if grant:
            target = state.stratum(idx)
            state = state._set_stratum(replace(target, allocation=target.allocation + grant))
            grants[idx] = grant
    return state._with_event(
        "budget_reallocated", from_stratum=from_stratum, grants=grants
    )


def _select_pending(state: TrialState, index: int) -> TrialState:
    """Assign the next dose: queued run-in dose if any, else the cEI argmax
    over the escalation-filtered grid."""
    st = state.stratum(index)
    if st.queued:
        dose = st.queued[0]
        st = replace(st, pending=dose, queued=st.queued[1:])
        state = state._set_stratum(st)
        return state._with_event(
            "dose_assigned", stratum=index, dose=list(dose),
            iteration=len(st.observations) // state.config.replication[index],
        )
    filtered = escalation.filter_candidates(
        st.region, state.config.candidate_grid, use_exclusion=True
    )
    if filtered.size == 0:
        # exclusion can starve a coarse grid; fall back to the bare region
        filtered = escalation.filter_candidates(
            st.region, state.config.candidate_grid, use_exclusion=False
        )
    cands = CandidateSet(filtered, index, state.config.strata[index])
    result = select_next_dose(state.f_fit, state.g_fit, cands, state.config.safety_spec(index))
    dose = tuple(float(v) for v in result.best_dose)
    st = replace(st, pending=dose)
    state = state._set_stratum(st)
    return state._with_event(
        "dose_assigned", stratum=index, dose=list(dose),
        iteration=len(st.observations) // state.config.replication[index],
        acquisition=result.best_value,
    )


def submit_observations(state: TrialState, batch: ObservationBatch) -> TrialState:
    """Record one cohort and advance the submitting stratum.

    The batch must match the pending assignment exactly. Both surrogates are
    refit on the pooled data; then the stratum runs its stop checks
    (toxicity, efficacy, budget) and, if still active, receives its next
    pending dose. Any terminal transition releases unspent budget.
    """
    st = state.stratum(batch.stratum)
    if not st.active:
        raise StateError("stratum %d is %s" % (batch.stratum, st.status.value))
    if st.pending is None or batch.dose != st.pending:
        raise ContractViolation(
            "dose %s does not match pending assignment %s" % (batch.dose, st.pending)
        )
    r = state.config.replication[batch.stratum]
    if len(batch.responses) != r:
        raise ContractViolation("expected %d responses, got %d" % (r, len(batch.responses)))

    obs = tuple((batch.dose, yf, yg) for yf, yg in batch.responses)
    st = replace(
        st,
        observations=st.observations + obs,
        patients_used=st.patients_used + r,
        pending=None,
        region=escalation.advance(st.region, batch.dose),
    )
    state = state._set_stratum(st)
    state = state._with_event(
        "observations_recorded", stratum=batch.stratum, dose=list(batch.dose),
        responses=[list(p) for p in batch.responses],
    )
    state = _refit(state)

    state = check_toxicity_stop(state, batch.stratum)
    if state.stratum(batch.stratum).active:
        full = state.config.candidates(batch.stratum)
        result = select_next_dose(
            state.f_fit, state.g_fit, full, state.config.safety_spec(batch.stratum)
        )
        state = check_efficacy_stop(
            state, batch.stratum, result.best_value / _response_scale(state)
        )
    if state.stratum(batch.stratum).active:
        st = state.stratum(batch.stratum)
        if st.patients_used + r > st.allocation:
            st = replace(st, status=StratumStatus.BUDGET_EXHAUSTED, pending=None, queued=())
            state = state._set_stratum(st)
            state = state._with_event(
                "stop_triggered", stratum=batch.stratum, reason="budget",
                counter=st.patients_used,
            )
    if state.stratum(batch.stratum).active:
        state = _select_pending(state, batch.stratum)
    else:
        state = reallocate_budget(state, batch.stratum)
    return state


def stratum_recommendation(
    state: TrialState, index: int, s: int, seed
) -> Recommendation:
    """Point estimate, posterior optimum samples, and diagnostics for one stratum."""
    config = state.config
    st = state.stratum(index)
    if st.status is StratumStatus.STOPPED_TOXICITY:
        empty = PosteriorOptimalDoses(
            doses=np.full((s, config.dims), np.nan), feasible=np.zeros(s, dtype=bool)
        )
        return Recommendation(index, None, empty, None, None, 0)
    if state.f_fit is None:
        raise StateError("no observations recorded yet")
    cands = config.candidates(index)
    spec = config.safety_spec(index)
    result = select_next_dose(state.f_fit, state.g_fit, cands, spec)
    point = point_estimate_optimum(state.f_fit, state.g_fit, cands, spec)
    samples = posterior_optimal_dose(state.f_fit, state.g_fit, cands, spec, s, seed)
    return Recommendation(
        stratum=index,
        point_estimate=point,
        posterior_samples=samples,
        incumbent=result.incumbent,
        max_cei=result.best_value,
        safe_set_size=len(result.safe_set),
    )


def final_recommendation(state: TrialState, s: int, seed) -> list:
    """One Recommendation per stratum, with per-stratum derived seeds."""
    seeds = np.random.SeedSequence(seed).spawn(state.config.n_strata)
    recs = [
        stratum_recommendation(state, k, s, seeds[k])
        for k in range(state.config.n_strata)
    ]
    return recs
