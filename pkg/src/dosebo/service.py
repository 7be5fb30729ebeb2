"""HTTP conduct service: live trials over a versioned JSON API.

Every state change appends to a per-trial JSONL event log; restarting the
service replays the logs and must land on the same state the mutations
produced live. A log that fails to replay marks only its own trial
read-only (with a diagnostic) and the service keeps running.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query
from scipy.special import ndtr

from . import engine, escalation
from .acquisition import safety_probabilities, select_next_dose
from .engine import (
    ConfigurationError,
    ContractViolation,
    ObservationBatch,
    StateError,
    TrialConfig,
    TrialState,
)
from .gp import posterior_moments
from .simulate import DEFAULT_GRID_SPACING, dose_grid

_CONFIG_FIELDS = {
    "candidate_grid", "grid_spacing", "max_patients", "strata",
    "toxicity_threshold", "safety_confidence", "efficacy_stop_threshold",
    "replication", "rate", "exclusion_side", "consecutive_required",
    "toxicity_stop_confidence", "escalate", "initial_doses", "fit_budget",
}


def config_from_dict(data) -> TrialConfig:
    """Build a TrialConfig from a JSON object; rejects unknown fields."""
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = sorted(set(data) - _CONFIG_FIELDS)
    if unknown:
        raise ConfigurationError("unknown config fields: %s" % ", ".join(unknown))
    if "candidate_grid" in data and "grid_spacing" in data:
        raise ConfigurationError("give either candidate_grid or grid_spacing, not both")
    kwargs = {k: v for k, v in data.items() if k not in ("candidate_grid", "grid_spacing")}
    if "candidate_grid" in data:
        grid = data["candidate_grid"]
    else:
        grid = dose_grid(float(data.get("grid_spacing", DEFAULT_GRID_SPACING)))
    try:
        return TrialConfig(candidate_grid=grid, **kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from None


def config_to_dict(config: TrialConfig) -> dict:
    return {
        "candidate_grid": config.candidate_grid.tolist(),
        "max_patients": config.max_patients,
        "strata": [list(z) for z in config.strata],
        "toxicity_threshold": list(config.toxicity_threshold),
        "safety_confidence": list(config.safety_confidence),
        "efficacy_stop_threshold": list(config.efficacy_stop_threshold),
        "replication": list(config.replication),
        "rate": list(config.rate),
        "exclusion_side": list(config.exclusion_side),
        "consecutive_required": config.consecutive_required,
        "toxicity_stop_confidence": config.toxicity_stop_confidence,
        "escalate": config.escalate,
        "initial_doses": (
            None if config.initial_doses is None
            else [[list(d) for d in q] for q in config.initial_doses]
        ),
        "fit_budget": config.fit_budget,
    }


class TrialRecord:
    """One live trial: engine state, its event log, and a write lock."""

    def __init__(self, trial_id: str, log_path: Path, state=None, error=None):
        self.trial_id = trial_id
        self.log_path = log_path
        self.state: TrialState | None = state
        self.error: str | None = error
        self.idempotency: dict = {}
        self.lock = threading.RLock()

    @property
    def read_only(self) -> bool:
        return self.error is not None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def append_events(record: TrialRecord, events, extra_payload=None) -> None:
    """Append engine events to the trial log (durably, one JSON line each).

    ``extra_payload`` maps an event sequence number to fields merged into
    that event's payload before writing (full config on trial_created, the
    idempotency key on observations_recorded).
    """
    extra_payload = extra_payload or {}
    lines = []
    for ev in events:
        payload = dict(ev["payload"])
        payload.update(extra_payload.get(ev["sequence"], {}))
        lines.append(json.dumps({
            "trial_id": record.trial_id,
            "sequence": ev["sequence"],
            "recorded_at": _now(),
            "kind": ev["kind"],
            "payload": payload,
        }))
    with open(record.log_path, "a") as fh:
        fh.write("".join(line + "\n" for line in lines))
        fh.flush()
        os.fsync(fh.fileno())


def read_log(log_path: Path) -> tuple:
    """Parse a trial log; returns (events, error) with the valid prefix."""
    events = []
    try:
        with open(log_path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    return events, "undecodable entry at line %d: %s" % (lineno, exc)
    except OSError as exc:
        return events, "unreadable log: %s" % exc
    return events, None


def replay_log(trial_id: str, log_path: Path) -> TrialRecord:
    """Rebuild a trial from its event log.

    Only trial_created and observations_recorded entries drive the engine;
    everything else (fits, assignments, stops, reallocation) is regenerated
    deterministically and then checked against the logged stream. Any
    divergence or parse failure leaves the salvaged prefix state in place
    and marks the trial read-only with a diagnostic.
    """
    logged, error = read_log(log_path)
    state = None
    idempotency = {}
    if not logged:
        error = error or "empty log"
    elif logged[0].get("kind") != "trial_created":
        error = "log does not begin with trial_created"
    else:
        try:
            config = config_from_dict(logged[0]["payload"]["config"])
            state = engine.start_trial(config)
            for ev in logged:
                if ev.get("kind") != "observations_recorded":
                    continue
                p = ev["payload"]
                batch = ObservationBatch(
                    stratum=int(p["stratum"]),
                    dose=tuple(p["dose"]),
                    responses=tuple(tuple(pair) for pair in p["responses"]),
                )
                state = engine.submit_observations(state, batch)
                key = p.get("idempotency_key")
                if key is not None:
                    idempotency[key] = ev.get("sequence")
        except Exception as exc:  # any bad entry leaves the trial read-only
            error = error or "replay failed: %s" % exc
    if error is None:
        want = [(ev.get("sequence"), ev.get("kind")) for ev in logged]
        got = [(ev["sequence"], ev["kind"]) for ev in state.events]
        if want != got:
            error = (
                "replayed event stream diverges from log "
                "(%d logged, %d regenerated)" % (len(want), len(got))
            )
    record = TrialRecord(trial_id, log_path, state=state, error=error)
    record.idempotency = idempotency
    return record


class TrialStore:
    """All trials known to one service process, keyed by id."""

    def __init__(self, state_dir):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.trials: dict = {}
        self._registry_lock = threading.Lock()
        for log_path in sorted(self.state_dir.glob("*.jsonl")):
            trial_id = log_path.stem
            self.trials[trial_id] = replay_log(trial_id, log_path)

    def create(self, config: TrialConfig) -> TrialRecord:
        state = engine.start_trial(config)
        with self._registry_lock:
            trial_id = "t%s" % uuid.uuid4().hex[:12]
            while trial_id in self.trials:
                trial_id = "t%s" % uuid.uuid4().hex[:12]
            record = TrialRecord(trial_id, self.state_dir / ("%s.jsonl" % trial_id))
            self.trials[trial_id] = record
        with record.lock:
            append_events(
                record, state.events, {0: {"config": config_to_dict(config)}}
            )
            record.state = state
        return record

    def get(self, trial_id: str) -> TrialRecord:
        record = self.trials.get(trial_id)
        if record is None:
            raise HTTPException(status_code=404, detail="no trial %r" % trial_id)
        return record


def _dose_list(dose) -> list | None:
    if dose is None:
        return None
    return [float(v) for v in dose]


def trial_status(record: TrialRecord) -> dict:
    state = record.state
    doc = {
        "trial_id": record.trial_id,
        "read_only": record.read_only,
        "diagnostic": record.error,
        "complete": None if state is None else state.complete,
        "total_patients": None if state is None else state.total_patients(),
        "event_count": None if state is None else len(state.events),
        "strata": [],
        "config": None if state is None else config_to_dict(state.config),
    }
    if state is None:
        return doc
    for st in state.strata:
        doc["strata"].append({
            "index": st.index,
            "covariates": list(state.config.strata[st.index]),
            "status": st.status.value,
            "pending_dose": _dose_list(st.pending),
            "queued": [_dose_list(d) for d in st.queued],
            "replication": state.config.replication[st.index],
            "patients_used": st.patients_used,
            "allocation": st.allocation,
            "cohorts": len(st.observations) // state.config.replication[st.index],
            "efficacy_counter": st.efficacy_counter,
            "toxicity_counter": st.toxicity_counter,
            "region_iteration": st.region.iteration,
            "region_fully_expanded": escalation.is_fully_expanded(st.region),
        })
    return doc


def _require_live(record: TrialRecord) -> TrialState:
    if record.read_only:
        raise HTTPException(
            status_code=409,
            detail="trial %s is read-only: %s" % (record.trial_id, record.error),
        )
    return record.state


def _recommendation_json(rec) -> dict:
    samples = rec.posterior_samples
    s = len(samples)
    feasible = samples.feasible
    distribution = []
    if s and np.any(feasible):
        doses, counts = np.unique(samples.doses[feasible], axis=0, return_counts=True)
        order = np.argsort(-counts, kind="stable")  # ties stay in lex order
        distribution = [
            {"dose": _dose_list(doses[i]), "frequency": float(counts[i] / s)}
            for i in order
        ]
    return {
        "stratum": rec.stratum,
        "point_estimate": _dose_list(rec.point_estimate),
        "incumbent": rec.incumbent,
        "max_cei": rec.max_cei,
        "safe_set_size": rec.safe_set_size,
        "feasible_fraction": float(np.mean(feasible)) if s else 0.0,
        "distribution": distribution,
    }


def posterior_grid(state: TrialState, index: int) -> dict:
    """Per-candidate posterior summaries for one stratum.

    Before any data exist the posterior mean is undefined (the constant
    trend is profiled out of a fit that has not happened), so the grid is
    served with zero means, unit spreads, and a ``prior`` flag.
    """
    config = state.config
    cands = config.candidates(index)
    spec = config.safety_spec(index)
    st = state.stratum(index)
    doc = {
        "stratum": index,
        "covariates": list(config.strata[index]),
        "threshold": spec.threshold,
        "confidence": spec.confidence,
        "pending_dose": _dose_list(st.pending),
        "status": st.status.value,
        "region": {
            "iteration": st.region.iteration,
            "rate": config.rate[index],
            "fully_expanded": escalation.is_fully_expanded(st.region),
            "evaluated": [_dose_list(d) for d in st.region.evaluated],
        },
    }
    if state.f_fit is None:
        prior_prob = float(ndtr(spec.threshold))
        doc.update({
            "prior": True,
            "incumbent": None,
            "grid": [
                {
                    "dose": _dose_list(d), "mu_f": 0.0, "sd_f": 1.0,
                    "mu_g": 0.0, "sd_g": 1.0,
                    "safety_probability": prior_prob, "cei": 0.0,
                }
                for d in cands.doses
            ],
        })
        return doc
    inputs = cands.inputs()
    pf = posterior_moments(state.f_fit, inputs)
    pg = posterior_moments(state.g_fit, inputs)
    result = select_next_dose(state.f_fit, state.g_fit, cands, spec)
    probs = safety_probabilities(state.g_fit, inputs, spec.threshold)
    doc.update({
        "prior": False,
        "incumbent": result.incumbent,
        "grid": [
            {
                "dose": _dose_list(cands.doses[i]),
                "mu_f": float(pf.mean[i]),
                "sd_f": float(np.sqrt(pf.variance[i])),
                "mu_g": float(pg.mean[i]),
                "sd_g": float(np.sqrt(pg.variance[i])),
                "safety_probability": float(probs[i]),
                "cei": float(result.values[i]),
            }
            for i in range(len(cands.doses))
        ],
    })
    return doc


def create_app(state_dir) -> FastAPI:
    """Service factory; all trial state lives under ``state_dir``."""
    store = TrialStore(state_dir)
    app = FastAPI(title="dosebo conduct service", version="1")
    app.state.store = store

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "trials": len(store.trials)}

    @app.post("/v1/trials", status_code=201)
    def create_trial(body: dict = Body(...)) -> dict:
        try:
            config = config_from_dict(body.get("config", body))
        except ConfigurationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        record = store.create(config)
        return trial_status(record)

    @app.get("/v1/trials/{trial_id}")
    def get_trial(trial_id: str) -> dict:
        return trial_status(store.get(trial_id))

    @app.post("/v1/trials/{trial_id}/observations")
    def post_observations(trial_id: str, body: dict = Body(...)) -> dict:
        record = store.get(trial_id)
        with record.lock:
            state = _require_live(record)
            key = body.get("idempotency_key")
            if not isinstance(key, str) or not key:
                raise HTTPException(
                    status_code=422, detail="idempotency_key (nonempty string) is required"
                )
            if key in record.idempotency:
                raise HTTPException(
                    status_code=409,
                    detail="duplicate idempotency key %r; first accepted at sequence %d"
                    % (key, record.idempotency[key]),
                )
            try:
                batch = ObservationBatch(
                    stratum=int(body["stratum"]),
                    dose=tuple(body["dose"]),
                    responses=tuple(tuple(pair) for pair in body["responses"]),
                )
                new_state = engine.submit_observations(state, batch)
            except (KeyError, TypeError, ValueError) as exc:
                if isinstance(exc, ContractViolation):
                    raise HTTPException(status_code=422, detail=str(exc))
                raise HTTPException(status_code=422, detail="malformed observation body: %s" % exc)
            except StateError as exc:
                raise HTTPException(status_code=409, detail=str(exc))
            new_events = new_state.events[len(state.events):]
            sequence = new_events[0]["sequence"]
            append_events(record, new_events, {sequence: {"idempotency_key": key}})
            record.state = new_state
            record.idempotency[key] = sequence
        doc = trial_status(record)
        doc["accepted"] = True
        doc["sequence"] = sequence
        return doc

    @app.get("/v1/trials/{trial_id}/recommendation")
    def get_recommendation(
        trial_id: str,
        samples: int = Query(default=1000, ge=1, le=200000),
        seed: int = Query(default=0, ge=0),
    ) -> dict:
        record = store.get(trial_id)
        state = record.state
        if state is None:
            _require_live(record)
        try:
            recs = engine.final_recommendation(state, samples, seed)
        except StateError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {
            "trial_id": record.trial_id,
            "samples": samples,
            "seed": seed,
            "recommendations": [_recommendation_json(rec) for rec in recs],
        }

    @app.get("/v1/trials/{trial_id}/posterior")
    def get_posterior(trial_id: str, stratum: int = Query(...)) -> dict:
        record = store.get(trial_id)
        state = record.state
        if state is None:
            _require_live(record)
        if not 0 <= stratum < state.config.n_strata:
            raise HTTPException(
                status_code=422,
                detail="stratum must lie in [0, %d)" % state.config.n_strata,
            )
        doc = posterior_grid(state, stratum)
        doc["trial_id"] = record.trial_id
        return doc

    @app.get("/v1/trials/{trial_id}/events")
    def get_events(trial_id: str, since: int = Query(default=-1)) -> dict:
        record = store.get(trial_id)
        events, error = read_log(record.log_path)
        return {
            "trial_id": record.trial_id,
            "events": [ev for ev in events if ev.get("sequence", -1) > since],
            "log_error": error,
        }

    return app
