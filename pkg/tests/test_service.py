"""HTTP surface: status codes, locking, persistence, auth, batch evaluation."""

import json
import time

import pytest
from fastapi.testclient import TestClient

from trajsim.domain import episode_to_dict
from trajsim.errors import ConfigError
from trajsim.service import (
    DEFAULT_BACKENDS,
    ServiceConfig,
    SnapshotStore,
    create_app,
    load_service_config,
)

PROFILE = {
    "age": 71,
    "gender": "female",
    "allergies": "none known",
    "chief_complaint": "fever and cough",
    "history_summary": "hypertension",
}
DIAGNOSTICS = {
    "primary": {"content": "community acquired pneumonia", "reason": "infiltrate"},
    "secondary": [],
}


def session_payload(**overrides):
    payload = {
        "profile": PROFILE,
        "diagnostics": DIAGNOSTICS,
        "backend": "oracle",
        "seed": 7,
        "start": 0,
    }
    payload.update(overrides)
    return payload


def step_payload(at, *actions):
    return {
        "at": at,
        "actions": [
            {"kind": kind, "code": code} for kind, code in actions
        ],
    }


@pytest.fixture()
def client():
    with TestClient(create_app(ServiceConfig())) as c:
        yield c


def create_session(client, **overrides):
    response = client.post("/sessions", json=session_payload(**overrides))
    assert response.status_code == 201, response.text
    return response.json()


# --- basic endpoints ------------------------------------------------------------------


def test_healthz_reports_backends_and_sessions(client):
    body = client.get("/healthz").json()
    assert body["status"] == "ok"
    assert body["backends"] == sorted(DEFAULT_BACKENDS)
    assert body["sessions"] == 0
    create_session(client)
    assert client.get("/healthz").json()["sessions"] == 1


def test_create_session_returns_descriptor(client):
    body = create_session(client)
    assert body["id"].startswith("s-")
    assert body["backend"] == "oracle"
    assert body["now"] == 0
    assert body["history_length"] == 0
    assert body["parent"] is None
    assert body["created_at"] > 0


def test_create_session_unknown_backend_404(client):
    response = client.post("/sessions", json=session_payload(backend="ghost"))
    assert response.status_code == 404
    assert response.json()["error"]["code"] == "unknown-backend"


def test_create_session_missing_profile_400(client):
    response = client.post("/sessions", json={"backend": "oracle"})
    assert response.status_code == 400
    assert response.json()["error"]["code"] == "schema-violation"


def test_create_session_non_object_payload_400(client):
    response = client.post("/sessions", json=["not", "an", "object"])
    assert response.status_code == 400
    assert response.json()["error"]["code"] == "schema-violation"


def test_get_unknown_session_404(client):
    response = client.get("/sessions/s-doesnotexist")
    assert response.status_code == 404
    assert response.json()["error"]["code"] == "unknown-session"


# --- stepping -------------------------------------------------------------------------


def test_step_round_trip(client):
    sid = create_session(client)["id"]
    response = client.post(
        f"/sessions/{sid}/step",
        json=step_payload(60, ("inquiry", "sodium"), ("intervention", "saline")),
    )
    assert response.status_code == 200, response.text
    body = response.json()
    assert body["descriptor"]["now"] == 60
    assert body["descriptor"]["history_length"] == 1
    events = body["event_set"]["events"]
    outcomes = {e["action"]["code"]: e["outcome"] for e in events}
    assert outcomes["sodium"]["variant"] == "numeric"
    assert outcomes["saline"] is None  # state-altering, explicit null on the wire
    # recorded history matches what the step returned
    history = client.get(f"/sessions/{sid}").json()["history"]
    assert history == [body["event_set"]]


def test_step_determinism_across_equal_sessions(client):
    first = create_session(client)["id"]
    second = create_session(client)["id"]
    payload = step_payload(120, ("inquiry", "sodium"), ("inquiry", "lactate"))
    a = client.post(f"/sessions/{first}/step", json=payload).json()["event_set"]
    b = client.post(f"/sessions/{second}/step", json=payload).json()["event_set"]
    assert a == b


def test_step_non_monotonic_409(client):
    sid = create_session(client)["id"]
    client.post(f"/sessions/{sid}/step", json=step_payload(60, ("inquiry", "sodium")))
    for at in (60, 30):
        response = client.post(
            f"/sessions/{sid}/step", json=step_payload(at, ("inquiry", "sodium"))
        )
        assert response.status_code == 409
        assert response.json()["error"]["code"] == "non-monotonic-time"


def test_step_while_locked_409(client):
    sid = create_session(client)["id"]
    store = client.app.state.store
    with store.exclusive(sid):
        response = client.post(
            f"/sessions/{sid}/step", json=step_payload(60, ("inquiry", "sodium"))
        )
    assert response.status_code == 409
    assert response.json()["error"]["code"] == "step-in-flight"
    # lock released: the same step now succeeds
    retry = client.post(
        f"/sessions/{sid}/step", json=step_payload(60, ("inquiry", "sodium"))
    )
    assert retry.status_code == 200


def test_step_empty_actions_400(client):
    sid = create_session(client)["id"]
    response = client.post(f"/sessions/{sid}/step", json={"at": 60, "actions": []})
    assert response.status_code == 400


def test_step_bad_action_kind_400(client):
    sid = create_session(client)["id"]
    response = client.post(
        f"/sessions/{sid}/step", json=step_payload(60, ("observation", "sodium"))
    )
    assert response.status_code == 400
    assert response.json()["error"]["code"] == "schema-violation"


def test_step_unknown_session_404(client):
    response = client.post(
        "/sessions/s-nope/step", json=step_payload(60, ("inquiry", "sodium"))
    )
    assert response.status_code == 404


def test_step_backend_failure_502():
    config = ServiceConfig(
        backends={
            "oracle": {"type": "oracle"},
            "dead-remote": {
                "type": "remote",
                "endpoint_url": "http://127.0.0.1:9/v1/chat/completions",
                "model_name": "nobody",
                "timeout_seconds": 0.2,
            },
        }
    )
    with TestClient(create_app(config)) as client:
        sid = create_session(client, backend="dead-remote")["id"]
        response = client.post(
            f"/sessions/{sid}/step", json=step_payload(60, ("inquiry", "sodium"))
        )
        assert response.status_code == 502
        assert response.json()["error"]["code"] == "backend-failure"
        # the failed step must not advance the session
        assert client.get(f"/sessions/{sid}").json()["descriptor"]["now"] == 0


# --- branching ------------------------------------------------------------------------


def stepped_session(client, times=(60, 120, 180)):
    sid = create_session(client)["id"]
    for at in times:
        response = client.post(
            f"/sessions/{sid}/step", json=step_payload(at, ("inquiry", "sodium"))
        )
        assert response.status_code == 200
    return sid


def test_branch_shares_prefix(client):
    sid = stepped_session(client)
    response = client.post(f"/sessions/{sid}/branch", json={"at_step": 2})
    assert response.status_code == 200
    body = response.json()
    assert body["parent"] == [sid, 2]
    assert body["history_length"] == 2
    assert body["now"] == 120
    original = client.get(f"/sessions/{sid}").json()["history"]
    branched = client.get(f"/sessions/{body['id']}").json()["history"]
    assert branched == original[:2]


def test_branch_out_of_range_416(client):
    sid = stepped_session(client)
    for at_step in (-1, 4):
        response = client.post(f"/sessions/{sid}/branch", json={"at_step": at_step})
        assert response.status_code == 416
        assert response.json()["error"]["code"] == "out-of-range"


def test_branch_then_diverge(client):
    sid = stepped_session(client)
    fork = client.post(f"/sessions/{sid}/branch", json={"at_step": 1}).json()["id"]
    response = client.post(
        f"/sessions/{fork}/step",
        json=step_payload(90, ("intervention", "saline"), ("inquiry", "sodium")),
    )
    assert response.status_code == 200
    assert client.get(f"/sessions/{sid}").json()["descriptor"]["history_length"] == 3
    assert client.get(f"/sessions/{fork}").json()["descriptor"]["history_length"] == 2


# --- expiry ---------------------------------------------------------------------------


def test_idle_sessions_expire_after_ttl():
    with TestClient(create_app(ServiceConfig(ttl_seconds=100))) as client:
        sid = create_session(client)["id"]
        assert client.get(f"/sessions/{sid}").status_code == 200
        store = client.app.state.store
        base = time.monotonic()
        store._clock = lambda: base + 1000  # idle far beyond the 100s TTL
        assert client.get(f"/sessions/{sid}").status_code == 404
        assert client.get("/healthz").json()["sessions"] == 0


def test_service_config_rejects_bad_ttl():
    with pytest.raises(ConfigError):
        ServiceConfig(ttl_seconds=0)


# --- persistence ----------------------------------------------------------------------


def persisted_config(tmp_path):
    return ServiceConfig(persist_dir=str(tmp_path / "sessions"))


def test_snapshot_file_grows_append_only(tmp_path):
    config = persisted_config(tmp_path)
    with TestClient(create_app(config)) as client:
        sid = create_session(client)["id"]
        path = tmp_path / "sessions" / f"{sid}.jsonl"
        assert path.exists()
        first = path.read_text()
        assert len(first.splitlines()) == 1  # meta line only
        client.post(f"/sessions/{sid}/step", json=step_payload(60, ("inquiry", "sodium")))
        second = path.read_text()
        assert second.startswith(first)  # strictly appended
        assert len(second.splitlines()) == 2
        client.post(f"/sessions/{sid}/step", json=step_payload(120, ("inquiry", "sodium")))
        third = path.read_text()
        assert third.startswith(second)
        assert len(third.splitlines()) == 3


def test_restart_restores_sessions_identically(tmp_path):
    config = persisted_config(tmp_path)
    with TestClient(create_app(config)) as client:
        sid = stepped_session(client)
        before = client.get(f"/sessions/{sid}").json()
    with TestClient(create_app(config)) as client:
        after = client.get(f"/sessions/{sid}").json()
        assert after == before
        # the restored session still accepts steps
        response = client.post(
            f"/sessions/{sid}/step", json=step_payload(240, ("inquiry", "sodium"))
        )
        assert response.status_code == 200


def test_restart_restores_branches(tmp_path):
    config = persisted_config(tmp_path)
    with TestClient(create_app(config)) as client:
        sid = stepped_session(client)
        fork = client.post(f"/sessions/{sid}/branch", json={"at_step": 2}).json()
    with TestClient(create_app(config)) as client:
        body = client.get(f"/sessions/{fork['id']}").json()
        assert body["descriptor"]["parent"] == [sid, 2]
        assert body["descriptor"]["history_length"] == 2


def test_restore_skips_corrupt_snapshots(tmp_path):
    config = persisted_config(tmp_path)
    with TestClient(create_app(config)) as client:
        sid = create_session(client)["id"]
    (tmp_path / "sessions" / "s-corrupt.jsonl").write_text("{not json\n")
    with TestClient(create_app(config)) as client:
        assert client.get(f"/sessions/{sid}").status_code == 200
        assert client.get("/healthz").json()["sessions"] == 1


def test_snapshot_round_trip_unit(tmp_path):
    from trajsim.backends import build_registry
    from trajsim.domain import diagnostics_from_dict, profile_from_dict
    from trajsim.engine import Engine, StepRequest

    engine = Engine(build_registry({"oracle": {"type": "oracle"}}))
    session = engine.init_session(
        profile_from_dict(PROFILE), diagnostics_from_dict(DIAGNOSTICS), 0, "oracle", 3
    )
    _, session = engine.step(session, StepRequest(60, (action("inquiry", "sodium"),)))
    store = SnapshotStore(tmp_path)
    store.create(session, created_at=123.5)
    restored, created_at = next(iter(store.restore()))
    assert created_at == 123.5
    assert restored == session


def action(kind, code):
    from trajsim.domain import Action, ActionKind

    return Action(ActionKind(kind), code)


# --- auth -----------------------------------------------------------------------------


def test_bearer_token_enforced(monkeypatch):
    monkeypatch.setenv("TRAJSIM_TEST_SERVICE_TOKEN", "open-sesame")
    config = ServiceConfig(auth_token_env_var="TRAJSIM_TEST_SERVICE_TOKEN")
    with TestClient(create_app(config)) as client:
        assert client.get("/healthz").status_code == 200  # exempt
        denied = client.post("/sessions", json=session_payload())
        assert denied.status_code == 401
        assert denied.json()["error"]["code"] == "unauthorized"
        wrong = client.post(
            "/sessions",
            json=session_payload(),
            headers={"authorization": "Bearer guess"},
        )
        assert wrong.status_code == 401
        granted = client.post(
            "/sessions",
            json=session_payload(),
            headers={"authorization": "Bearer open-sesame"},
        )
        assert granted.status_code == 201


def test_no_auth_configured_means_open(client):
    assert client.get("/healthz").status_code == 200
    assert client.post("/sessions", json=session_payload()).status_code == 201


# --- evaluation -----------------------------------------------------------------------


def test_evaluate_inline_identity(client, small_corpus):
    episodes = [episode_to_dict(e) for e in small_corpus]
    response = client.post("/evaluate", json={"pred": episodes, "truth": episodes})
    assert response.status_code == 200, response.text
    body = response.json()
    assert len(body["per_episode"]) == len(small_corpus)
    assert body["aggregate"]["avg_score"] == pytest.approx(1.0)
    assert body["aggregate"]["smape"] == pytest.approx(0.0, abs=1e-12)


def test_evaluate_from_files(client, small_corpus, tmp_path):
    from trajsim.corpus import write_corpus

    path = tmp_path / "corpus.jsonl"
    write_corpus(path, small_corpus)
    response = client.post(
        "/evaluate", json={"pred_path": str(path), "truth_path": str(path)}
    )
    assert response.status_code == 200
    assert response.json()["aggregate"]["avg_score"] == pytest.approx(1.0)


def test_evaluate_length_mismatch_400(client, small_corpus):
    episodes = [episode_to_dict(e) for e in small_corpus]
    response = client.post(
        "/evaluate", json={"pred": episodes[:-1], "truth": episodes}
    )
    assert response.status_code == 400
    assert response.json()["error"]["code"] == "schema-violation"


def test_evaluate_misaligned_timelines_400(client, small_corpus):
    episodes = [episode_to_dict(e) for e in small_corpus]
    shifted = json.loads(json.dumps(episodes))
    for event_set in shifted[0]["timeline"]:
        event_set["timestamp"] += 1
    response = client.post("/evaluate", json={"pred": shifted, "truth": episodes})
    assert response.status_code == 400
    assert response.json()["error"]["code"] == "alignment-error"


def test_evaluate_custom_ranges(client, small_corpus):
    episodes = [episode_to_dict(e) for e in small_corpus]
    ranges = {"sodium": {"low": 0.0, "high": 1.0, "unit": "mEq/L"}}
    response = client.post(
        "/evaluate", json={"pred": episodes, "truth": episodes, "ranges": ranges}
    )
    assert response.status_code == 200
    # every sodium reading sits far above 1.0, so truth is all-abnormal and
    # identical predictions recover every abnormal point
    assert response.json()["aggregate"]["stat"]["f1"] == pytest.approx(1.0)


def test_evaluate_missing_fields_400(client):
    response = client.post("/evaluate", json={"pred": []})
    assert response.status_code == 400


# --- config loading ---------------------------------------------------------------


def test_load_service_config_file_and_env(tmp_path):
    path = tmp_path / "service.json"
    path.write_text(json.dumps({"port": 9000, "ttl_seconds": 60}))
    config = load_service_config(path, env={})
    assert config.port == 9000
    assert config.ttl_seconds == 60
    config = load_service_config(path, env={"TRAJSIM_PORT": "9100"})
    assert config.port == 9100  # env wins
    with pytest.raises(ConfigError):
        load_service_config(path, env={"TRAJSIM_PORT": "not-a-port"})


def test_load_service_config_registry_env(tmp_path):
    registry = tmp_path / "backends.json"
    registry.write_text(json.dumps({"only": {"type": "oracle"}}))
    config = load_service_config(env={"TRAJSIM_BACKEND_REGISTRY": str(registry)})
    assert set(config.backends) == {"only"}


def test_service_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ServiceConfig.from_dict({"prot": 8000})
