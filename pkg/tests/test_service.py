import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient
from scipy.special import ndtr

from dosebo import engine
from dosebo.acquisition import safety_probabilities, select_next_dose
from dosebo.engine import ConfigurationError, ObservationBatch
from dosebo.gp import posterior_moments
from dosebo.service import config_from_dict, config_to_dict, create_app, read_log

CONFIG = {
    "grid_spacing": 0.25,
    "max_patients": 12,
    "strata": [[0.0], [1.0]],
    "toxicity_threshold": 0.5,
    "replication": 2,
    "rate": 0.25,
}

BATCH1 = {"stratum": 0, "dose": [0.0, 0.0], "responses": [[-1.0, 0.1], [-0.9, 0.12]]}


def _client(tmp_path, name="svc"):
    return TestClient(create_app(tmp_path / name))


def _submit(client, trial_id, body, key):
    return client.post(
        "/v1/trials/%s/observations" % trial_id, json=dict(body, idempotency_key=key)
    )


def _next_batch(status, stratum=0, responses=((-1.0, 0.1), (-0.9, 0.12))):
    pending = status["strata"][stratum]["pending_dose"]
    return {"stratum": stratum, "dose": pending, "responses": [list(r) for r in responses]}


def test_health_and_create_status(tmp_path):
    client = _client(tmp_path)
    assert client.get("/v1/health").json() == {"status": "ok", "trials": 0}
    resp = client.post("/v1/trials", json={"config": CONFIG})
    assert resp.status_code == 201
    doc = resp.json()
    assert doc["trial_id"].startswith("t")
    assert doc["complete"] is False
    assert doc["total_patients"] == 0
    assert doc["event_count"] == 3  # created + one pending dose per stratum
    for k, st in enumerate(doc["strata"]):
        assert st["pending_dose"] == [0.0, 0.0]
        assert st["status"] == "active"
        assert st["allocation"] == 6
        assert st["covariates"] == CONFIG["strata"][k]
    # a bare config body (no wrapper) is accepted too
    assert client.post("/v1/trials", json=CONFIG).status_code == 201
    assert client.get("/v1/health").json()["trials"] == 2


def test_unknown_trial_is_404(tmp_path):
    client = _client(tmp_path)
    assert client.get("/v1/trials/missing").status_code == 404
    assert _submit(client, "missing", BATCH1, "k").status_code == 404


def test_config_rejections_are_422(tmp_path):
    client = _client(tmp_path)
    r = client.post("/v1/trials", json={"grid_spacing": 0.25, "max_patiens": 9})
    assert r.status_code == 422
    assert "unknown config fields: max_patiens" in r.json()["detail"]
    r = client.post("/v1/trials", json={"grid_spacing": 0.25, "candidate_grid": [[0, 0]],
                                        "max_patients": 8})
    assert r.status_code == 422
    assert "not both" in r.json()["detail"]
    r = client.post("/v1/trials", json=dict(CONFIG, max_patients=3))
    assert r.status_code == 422
    assert "budget below one cohort" in r.json()["detail"]


def test_observation_flow_and_idempotency(tmp_path):
    client = _client(tmp_path)
    trial = client.post("/v1/trials", json=CONFIG).json()["trial_id"]

    resp = _submit(client, trial, BATCH1, "c1")
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["accepted"] is True
    assert doc["sequence"] == 3
    assert doc["total_patients"] == 2
    assert doc["strata"][0]["patients_used"] == 2
    assert doc["strata"][0]["cohorts"] == 1
    events_before = doc["event_count"]

    # same key again: refused, no state change
    dup = _submit(client, trial, BATCH1, "c1")
    assert dup.status_code == 409
    assert "duplicate idempotency key 'c1'" in dup.json()["detail"]
    assert "sequence 3" in dup.json()["detail"]
    assert client.get("/v1/trials/%s" % trial).json()["event_count"] == events_before


def test_malformed_submissions_are_422(tmp_path):
    client = _client(tmp_path)
    trial = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    cases = [
        (dict(BATCH1, dose=[0.25, 0.0]), "does not match pending"),
        (dict(BATCH1, responses=[[-1.0, 0.1]]), "expected 2 responses"),
        (dict(BATCH1, stratum=7), "no stratum"),
        (dict(BATCH1, responses=[[None, 0.1], [0.0, 0.0]]), "malformed"),
        ({"stratum": 0}, "malformed"),
    ]
    for body, needle in cases:
        resp = _submit(client, trial, body, "k-%s" % needle)
        assert resp.status_code == 422, body
        assert needle in resp.json()["detail"]
    resp = client.post("/v1/trials/%s/observations" % trial, json=BATCH1)
    assert resp.status_code == 422
    assert "idempotency_key" in resp.json()["detail"]
    # nothing above changed the trial
    assert client.get("/v1/trials/%s" % trial).json()["total_patients"] == 0


# Story: two submitters race with the same key; exactly one wins and the
# trial advances exactly once.
def test_concurrent_duplicate_is_single_state_change(tmp_path):
    app = create_app(tmp_path / "svc")
    c1, c2 = TestClient(app), TestClient(app)
    trial = c1.post("/v1/trials", json=CONFIG).json()["trial_id"]

    with ThreadPoolExecutor(2) as pool:
        futs = [pool.submit(_submit, c, trial, BATCH1, "race") for c in (c1, c2)]
        codes = sorted(f.result().status_code for f in futs)
    assert codes == [200, 409]
    doc = c1.get("/v1/trials/%s" % trial).json()
    assert doc["total_patients"] == 2
    assert doc["strata"][0]["cohorts"] == 1


def test_recommendation_endpoint(tmp_path):
    client = _client(tmp_path)
    trial = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    # no data yet: nothing to recommend
    r = client.get("/v1/trials/%s/recommendation" % trial)
    assert r.status_code == 409
    assert "no observations" in r.json()["detail"]

    _submit(client, trial, BATCH1, "c1")
    r = client.get("/v1/trials/%s/recommendation?samples=400&seed=5" % trial)
    assert r.status_code == 200
    doc = r.json()
    assert doc["samples"] == 400 and doc["seed"] == 5
    assert len(doc["recommendations"]) == 2
    rec = doc["recommendations"][0]
    assert rec["point_estimate"] is not None
    freqs = [d["frequency"] for d in rec["distribution"]]
    assert freqs == sorted(freqs, reverse=True)
    assert sum(freqs) == pytest.approx(rec["feasible_fraction"], abs=1e-12)
    # fixed seed, fixed draw count: byte-identical answer
    again = client.get("/v1/trials/%s/recommendation?samples=400&seed=5" % trial)
    assert again.json() == doc
    assert client.get(
        "/v1/trials/%s/recommendation?samples=0" % trial
    ).status_code == 422


def test_posterior_prior_grid_before_data(tmp_path):
    client = _client(tmp_path)
    trial = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    doc = client.get("/v1/trials/%s/posterior?stratum=1" % trial).json()
    assert doc["prior"] is True
    assert doc["incumbent"] is None
    assert doc["status"] == "active"
    assert doc["region"] == {
        "iteration": 0, "rate": 0.25, "fully_expanded": False, "evaluated": [],
    }
    assert len(doc["grid"]) == 25
    for cell in doc["grid"]:
        assert cell["mu_f"] == 0.0 and cell["sd_f"] == 1.0
        assert cell["mu_g"] == 0.0 and cell["sd_g"] == 1.0
        assert cell["cei"] == 0.0
        assert cell["safety_probability"] == pytest.approx(float(ndtr(0.5)))
    assert client.get("/v1/trials/%s/posterior?stratum=9" % trial).status_code == 422
    assert client.get("/v1/trials/%s/posterior" % trial).status_code == 422


# Story: the posterior endpoint is a view, not a second implementation; its
# numbers equal direct engine calls on an identical in-process trial.
def test_posterior_grid_matches_engine_oracle(tmp_path):
    client = _client(tmp_path)
    trial = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    _submit(client, trial, BATCH1, "c1")
    doc = client.get("/v1/trials/%s/posterior?stratum=0" % trial).json()

    state = engine.start_trial(config_from_dict(CONFIG))
    state = engine.submit_observations(
        state,
        ObservationBatch(0, tuple(BATCH1["dose"]),
                         tuple(tuple(r) for r in BATCH1["responses"])),
    )
    cands = state.config.candidates(0)
    spec = state.config.safety_spec(0)
    pf = posterior_moments(state.f_fit, cands.inputs())
    pg = posterior_moments(state.g_fit, cands.inputs())
    result = select_next_dose(state.f_fit, state.g_fit, cands, spec)
    probs = safety_probabilities(state.g_fit, cands.inputs(), spec.threshold)

    assert doc["prior"] is False
    assert doc["incumbent"] == pytest.approx(result.incumbent, abs=1e-12)
    assert doc["pending_dose"] == list(state.stratum(0).pending)
    for i, cell in enumerate(doc["grid"]):
        assert cell["dose"] == list(cands.doses[i])
        assert cell["mu_f"] == pytest.approx(float(pf.mean[i]), abs=1e-12)
        assert cell["sd_f"] == pytest.approx(float(np.sqrt(pf.variance[i])), abs=1e-12)
        assert cell["mu_g"] == pytest.approx(float(pg.mean[i]), abs=1e-12)
        assert cell["safety_probability"] == pytest.approx(float(probs[i]), abs=1e-12)
        assert cell["cei"] == pytest.approx(float(result.values[i]), abs=1e-12)


def test_events_endpoint_filters_by_sequence(tmp_path):
    client = _client(tmp_path)
    trial = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    _submit(client, trial, BATCH1, "c1")
    doc = client.get("/v1/trials/%s/events" % trial).json()
    assert doc["log_error"] is None
    seqs = [e["sequence"] for e in doc["events"]]
    assert seqs == list(range(len(seqs)))
    kinds = [e["kind"] for e in doc["events"]]
    assert kinds[0] == "trial_created"
    assert "observations_recorded" in kinds
    assert "config" in doc["events"][0]["payload"]
    obs = next(e for e in doc["events"] if e["kind"] == "observations_recorded")
    assert obs["payload"]["idempotency_key"] == "c1"

    tail = client.get("/v1/trials/%s/events?since=2" % trial).json()["events"]
    assert [e["sequence"] for e in tail] == seqs[3:]


# Story: a service restart replays the logs and lands exactly where the
# live process stopped, idempotency keys included.
def test_restart_replays_identical_state(tmp_path):
    state_dir = tmp_path / "svc"
    client = TestClient(create_app(state_dir))
    trial = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    doc = _submit(client, trial, BATCH1, "c1").json()
    doc = _submit(client, trial, _next_batch(doc, 1), "c2").json()
    before_status = client.get("/v1/trials/%s" % trial).json()
    before_rec = client.get("/v1/trials/%s/recommendation?samples=300&seed=2" % trial).json()

    fresh = TestClient(create_app(state_dir))
    assert fresh.get("/v1/health").json()["trials"] == 1
    after_status = fresh.get("/v1/trials/%s" % trial).json()
    assert after_status == before_status
    assert after_status["read_only"] is False
    after_rec = fresh.get("/v1/trials/%s/recommendation?samples=300&seed=2" % trial).json()
    assert after_rec == before_rec
    # replayed idempotency still blocks the old keys
    assert _submit(fresh, trial, BATCH1, "c2").status_code == 409


def test_corrupt_log_is_isolated_and_salvaged(tmp_path):
    state_dir = tmp_path / "svc"
    client = TestClient(create_app(state_dir))
    bad = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    good = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    doc = _submit(client, bad, BATCH1, "c1").json()
    salvaged_events = doc["event_count"]
    _submit(client, bad, _next_batch(doc, 1), "c2")
    log = state_dir / ("%s.jsonl" % bad)
    lines = log.read_text().splitlines()
    log.write_text("\n".join(lines[:salvaged_events] + ["{not json"]) + "\n")

    fresh = TestClient(create_app(state_dir))
    doc = fresh.get("/v1/trials/%s" % bad).json()
    assert doc["read_only"] is True
    assert "undecodable entry at line %d" % (salvaged_events + 1) in doc["diagnostic"]
    # the valid prefix was salvaged: first cohort is there, second is gone
    assert doc["total_patients"] == 2
    assert doc["event_count"] == salvaged_events
    resp = _submit(fresh, bad, _next_batch(doc, 1), "c3")
    assert resp.status_code == 409
    assert "read-only" in resp.json()["detail"]
    # the neighbor trial is untouched and still writable
    gdoc = fresh.get("/v1/trials/%s" % good).json()
    assert gdoc["read_only"] is False
    assert _submit(fresh, good, BATCH1, "g1").status_code == 200
    # events endpoint still serves the salvaged prefix plus the error
    edoc = fresh.get("/v1/trials/%s/events" % bad).json()
    assert len(edoc["events"]) == salvaged_events
    assert "undecodable" in edoc["log_error"]


def test_tampered_log_stream_is_detected(tmp_path):
    state_dir = tmp_path / "svc"
    client = TestClient(create_app(state_dir))
    trial = client.post("/v1/trials", json=CONFIG).json()["trial_id"]
    _submit(client, trial, BATCH1, "c1")
    log = state_dir / ("%s.jsonl" % trial)
    lines = log.read_text().splitlines()
    kept = [ln for ln in lines if json.loads(ln)["kind"] != "fit_updated"]
    assert len(kept) < len(lines)
    log.write_text("\n".join(kept) + "\n")

    fresh = TestClient(create_app(state_dir))
    doc = fresh.get("/v1/trials/%s" % trial).json()
    assert doc["read_only"] is True
    assert "diverges from log" in doc["diagnostic"]


def test_config_dict_roundtrip():
    config = config_from_dict(CONFIG)
    again = config_from_dict(config_to_dict(config))
    assert np.array_equal(again.candidate_grid, config.candidate_grid)
    assert again.strata == config.strata
    assert again.replication == config.replication
    assert again.toxicity_threshold == config.toxicity_threshold
    assert again.consecutive_required == config.consecutive_required
    with pytest.raises(ConfigurationError, match="JSON object"):
        config_from_dict([1, 2])
