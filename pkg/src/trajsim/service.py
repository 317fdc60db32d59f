"""HTTP session service: engine sessions plus batch evaluation over the wire.

Sessions live in memory behind per-id write locks and, when a persistence
directory is configured, as append-only snapshot files (one meta line, then
one canonical line per event set). Restoring on startup replays those files,
so a restarted service answers GET /sessions/{id} identically.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path
from typing import Any, Iterator, Mapping

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .backends import build_registry
from .corpus import read_corpus
from .domain import (
    ActionKind,
    DiagnosticProfile,
    EventSet,
    PatientState,
    StaticProfile,
    action_from_dict,
    action_to_dict,
    diagnostics_from_dict,
    diagnostics_to_dict,
    dumps_canonical,
    episode_from_dict,
    event_set_from_dict,
    event_set_to_dict,
    outcome_to_dict,
    profile_from_dict,
    profile_to_dict,
)
from .engine import Engine, Session, SessionStore, StepRequest
from .errors import (
    AlignmentError,
    BackendFailureError,
    ConcurrentStepError,
    ConfigError,
    EmptyInputError,
    MalformedOutcomeError,
    NonMonotonicTimeError,
    OutOfRangeError,
    TrajsimError,
    UnknownBackendError,
    UnknownSessionError,
)
from .metrics import ReferenceRangeTable, evaluate_batch, load_reference_ranges
from .backends.oracle import default_reference_ranges

log = logging.getLogger(__name__)

DEFAULT_TTL_SECONDS = 24 * 3600.0

DEFAULT_BACKENDS: Mapping[str, Mapping[str, Any]] = {
    "oracle": {"type": "oracle"},
    "anchored-oracle": {"type": "anchored"},
    "noisy-oracle": {"type": "oracle", "noise_sigma": 0.05},
}

ENV_PORT = "TRAJSIM_PORT"
ENV_REGISTRY = "TRAJSIM_BACKEND_REGISTRY"
ENV_TTL = "TRAJSIM_SESSION_TTL"
ENV_PERSIST = "TRAJSIM_PERSIST_DIR"


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8420
    backends: Mapping[str, Mapping[str, Any]] = field(
        default_factory=lambda: dict(DEFAULT_BACKENDS)
    )
    ttl_seconds: float = DEFAULT_TTL_SECONDS
    persist_dir: str = ""
    auth_token_env_var: str = ""
    cors_origins: tuple[str, ...] = ("*",)
    engine_id_seed: int = 0

    def __post_init__(self):
        if not (0 < self.port < 65536):
            raise ConfigError(f"port must be in (0, 65536) (got {self.port})")
        if self.ttl_seconds <= 0:
            raise ConfigError("ttl_seconds must be positive")
        if not self.backends:
            raise ConfigError("at least one backend must be registered")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ServiceConfig":
        known = {f.name for f in dataclass_fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown service config keys: {sorted(unknown)}")
        data = dict(payload)
        if "cors_origins" in data:
            data["cors_origins"] = tuple(data["cors_origins"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad service config: {exc}") from exc


def load_service_config(
    path: str | os.PathLike[str] | None = None,
    env: Mapping[str, str] | None = None,
) -> ServiceConfig:
    """Config file merged with environment overrides (env wins)."""
    env = os.environ if env is None else env
    payload: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"service config {path}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"service config {path}: expected an object")
    if ENV_PORT in env:
        try:
            payload["port"] = int(env[ENV_PORT])
        except ValueError as exc:
            raise ConfigError(f"{ENV_PORT} must be an integer") from exc
    if ENV_TTL in env:
        try:
            payload["ttl_seconds"] = float(env[ENV_TTL])
        except ValueError as exc:
            raise ConfigError(f"{ENV_TTL} must be a number") from exc
    if ENV_PERSIST in env:
        payload["persist_dir"] = env[ENV_PERSIST]
    if ENV_REGISTRY in env:
        with open(env[ENV_REGISTRY], encoding="utf-8") as fh:
            registry = json.load(fh)
        if not isinstance(registry, dict):
            raise ConfigError("backend registry file must hold an object")
        payload["backends"] = registry
    return ServiceConfig.from_dict(payload)


# --- persistence ------------------------------------------------------------------

META_KIND = "session-meta"


@dataclass
class _SessionMeta:
    created_at: float


class SnapshotStore:
    """Append-only per-session snapshot files in the episode line format."""

    def __init__(self, directory: str | os.PathLike[str]):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.jsonl"

    def create(self, session: Session, created_at: float) -> None:
        meta = {
            "kind": META_KIND,
            "id": session.id,
            "backend": session.backend_ref,
            "seed": session.seed,
            "start": session.start,
            "created_at": created_at,
            "parent": list(session.parent) if session.parent else None,
            "profile": profile_to_dict(session.state.profile),
            "diagnostics": diagnostics_to_dict(session.state.diagnostics),
        }
        lines = [dumps_canonical(meta)]
        lines += [dumps_canonical(event_set_to_dict(s)) for s in session.state.history]
        with open(self._path(session.id), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    def append_step(self, session_id: str, event_set: EventSet) -> None:
        with open(self._path(session_id), "a", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_canonical(event_set_to_dict(event_set)) + "\n")

    def restore(self) -> Iterator[tuple[Session, float]]:
        for path in sorted(self.directory.glob("*.jsonl")):
            try:
                yield self._restore_one(path)
            except (json.JSONDecodeError, KeyError, ValueError, TrajsimError) as exc:
                log.warning("skipping unreadable snapshot %s: %s", path.name, exc)

    def _restore_one(self, path: Path) -> tuple[Session, float]:
        with open(path, encoding="utf-8") as fh:
            meta = json.loads(fh.readline())
            if meta.get("kind") != META_KIND:
                raise ValueError("first line is not a session meta record")
            history = tuple(
                event_set_from_dict(json.loads(line))
                for line in fh
                if line.strip()
            )
        start = int(meta["start"])
        parent_raw = meta.get("parent")
        state = PatientState(
            now=history[-1].timestamp if history else start,
            profile=profile_from_dict(meta["profile"]),
            diagnostics=diagnostics_from_dict(meta["diagnostics"]),
            history=history,
        )
        session = Session(
            id=str(meta["id"]),
            state=state,
            backend_ref=str(meta["backend"]),
            seed=int(meta["seed"]),
            start=start,
            parent=(str(parent_raw[0]), int(parent_raw[1])) if parent_raw else None,
        )
        return session, float(meta.get("created_at", 0.0))


# --- response shaping ----------------------------------------------------------------


def _render_event(event) -> dict:
    """Event as wire JSON; state-altering actions carry an explicit null."""
    outcome = (
        None
        if event.action.kind is ActionKind.INTERVENTION
        else outcome_to_dict(event.outcome)
    )
    return {"action": action_to_dict(event.action), "outcome": outcome}


def _render_event_set(event_set: EventSet) -> dict:
    return {
        "timestamp": event_set.timestamp,
        "events": [_render_event(e) for e in event_set.events],
    }


def _descriptor(session: Session, created_at: float) -> dict:
    return {
        "id": session.id,
        "created_at": created_at,
        "backend": session.backend_ref,
        "now": session.state.now,
        "history_length": session.history_length,
        "parent": list(session.parent) if session.parent else None,
    }


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


# --- app factory ----------------------------------------------------------------------


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    engine = Engine(build_registry(config.backends), id_seed=config.engine_id_seed)
    store = SessionStore(ttl_seconds=config.ttl_seconds)
    snapshots = SnapshotStore(config.persist_dir) if config.persist_dir else None
    created: dict[str, float] = {}

    if snapshots is not None:
        restored = 0
        for session, created_at in snapshots.restore():
            store.put(session)
            created[session.id] = created_at
            restored += 1
        if restored:
            log.info("restored %d session(s) from %s", restored, snapshots.directory)

    app = FastAPI(title="trajsim service", docs_url=None, redoc_url=None)
    app.state.engine = engine
    app.state.store = store
    app.state.config = config

    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(config.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    expected_token = (
        os.environ.get(config.auth_token_env_var, "")
        if config.auth_token_env_var
        else ""
    )

    @app.middleware("http")
    async def bearer_guard(request: Request, call_next):
        if expected_token and request.url.path != "/healthz":
            header = request.headers.get("authorization", "")
            if header != f"Bearer {expected_token}":
                return _error(401, "unauthorized", "missing or wrong bearer token")
        return await call_next(request)

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return _error(400, "schema-violation", str(exc.errors()[:3]))

    @app.exception_handler(TrajsimError)
    async def on_domain_error(request: Request, exc: TrajsimError):
        return _error(400, "schema-violation", str(exc))

    def _created_at(session_id: str) -> float:
        return created.get(session_id, 0.0)

    @app.get("/healthz")
    async def healthz():
        return {
            "status": "ok",
            "backends": sorted(engine.backends),
            "sessions": len(store),
        }

    @app.post("/sessions", status_code=201)
    async def create_session(payload: dict):
        try:
            profile = profile_from_dict(payload["profile"])
            diagnostics = diagnostics_from_dict(payload.get("diagnostics", {}))
            backend_ref = str(payload["backend"])
            seed = int(payload.get("seed", 0))
            start = int(payload.get("start", 0))
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, "schema-violation", f"bad session request: {exc}")
        try:
            session = engine.init_session(profile, diagnostics, start, backend_ref, seed)
        except UnknownBackendError as exc:
            return _error(404, "unknown-backend", str(exc))
        now = time.time()
        store.put(session)
        created[session.id] = now
        if snapshots is not None:
            snapshots.create(session, now)
        return _descriptor(session, now)

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        try:
            session = store.get(session_id)
        except UnknownSessionError as exc:
            return _error(404, "unknown-session", str(exc))
        return {
            "descriptor": _descriptor(session, _created_at(session_id)),
            "history": [_render_event_set(s) for s in session.state.history],
        }

    @app.post("/sessions/{session_id}/step")
    async def post_step(session_id: str, payload: dict):
        try:
            req = StepRequest(
                at=int(payload["at"]),
                actions=tuple(
                    action_from_dict(a) for a in payload.get("actions", [])
                ),
            )
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, "schema-violation", f"bad step request: {exc}")
        except TrajsimError as exc:
            return _error(400, "schema-violation", str(exc))
        try:
            with store.exclusive(session_id) as session:
                event_set, updated = engine.step(session, req)
                store.put(updated)
                if snapshots is not None:
                    snapshots.append_step(session_id, event_set)
        except UnknownSessionError as exc:
            return _error(404, "unknown-session", str(exc))
        except ConcurrentStepError as exc:
            return _error(409, "step-in-flight", str(exc))
        except NonMonotonicTimeError as exc:
            return _error(409, "non-monotonic-time", str(exc))
        except (BackendFailureError, MalformedOutcomeError) as exc:
            return _error(502, "backend-failure", str(exc))
        return {
            "event_set": _render_event_set(event_set),
            "descriptor": _descriptor(updated, _created_at(session_id)),
        }

    @app.post("/sessions/{session_id}/branch")
    async def post_branch(session_id: str, payload: dict):
        try:
            at_step = int(payload["at_step"])
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, "schema-violation", f"bad branch request: {exc}")
        try:
            session = store.get(session_id)
        except UnknownSessionError as exc:
            return _error(404, "unknown-session", str(exc))
        try:
            branched = engine.branch(session, at_step)
        except OutOfRangeError as exc:
            return _error(416, "out-of-range", str(exc))
        now = time.time()
        store.put(branched)
        created[branched.id] = now
        if snapshots is not None:
            snapshots.create(branched, now)
        return _descriptor(branched, now)

    @app.post("/evaluate")
    async def post_evaluate(payload: dict):
        try:
            pred = _load_corpus_field(payload, "pred")
            truth = _load_corpus_field(payload, "truth")
            ranges = _load_ranges_field(payload)
        except (KeyError, TypeError, ValueError) as exc:
            return _error(400, "schema-violation", f"bad evaluate request: {exc}")
        except TrajsimError as exc:
            return _error(400, "schema-violation", str(exc))
        if len(pred) != len(truth):
            return _error(
                400,
                "schema-violation",
                f"{len(pred)} predicted vs {len(truth)} truth episodes",
            )
        try:
            per_run, aggregate = evaluate_batch(list(zip(pred, truth)), ranges)
        except (AlignmentError, EmptyInputError) as exc:
            return _error(400, "alignment-error", str(exc))
        return {
            "per_episode": [r.to_dict() for r in per_run],
            "aggregate": aggregate.to_dict(),
        }

    return app


def _load_corpus_field(payload: Mapping[str, Any], name: str):
    if name in payload:
        episodes = payload[name]
        if not isinstance(episodes, list):
            raise ValueError(f"{name} must be a list of episodes")
        return [episode_from_dict(e) for e in episodes]
    path_key = f"{name}_path"
    if path_key in payload:
        return read_corpus(payload[path_key])
    raise ValueError(f"need {name} (inline) or {path_key}")


def _load_ranges_field(payload: Mapping[str, Any]) -> ReferenceRangeTable:
    if payload.get("ranges") is not None:
        return ReferenceRangeTable.from_dict(payload["ranges"])
    if payload.get("ranges_path"):
        return load_reference_ranges(payload["ranges_path"])
    return ReferenceRangeTable.from_dict(default_reference_ranges())
