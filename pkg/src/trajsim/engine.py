"""Sequential simulation: sessions, steps, branching, and rollout regimes.

A step takes the session's state plus one set of actions at a strictly
later timestamp, asks the backend for one outcome per action, validates
the dual-mode contract (inquiries get values, interventions get the empty
outcome), and appends the resulting event set to the history. Rejected
steps leave the session untouched.

Two rollout regimes replay a recorded episode's action schedule:
full-trajectory conditions each step on the model's own previous outputs;
next-step conditions on the ground-truth prefix (teacher forcing).
"""

from __future__ import annotations

import math
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Mapping, Sequence

from .backends.base import OutcomeModel
from .domain import (
    Action,
    ActionKind,
    DiagnosticProfile,
    EmptyOutcome,
    Episode,
    Event,
    EventSet,
    LabelOutcome,
    NumericOutcome,
    Outcome,
    PatientState,
    StaticProfile,
    Timestamp,
)
from .errors import (
    BackendError,
    BackendFailureError,
    ConcurrentStepError,
    EngineError,
    MalformedOutcomeError,
    NonMonotonicTimeError,
    OutOfRangeError,
    RolloutStepError,
    UnknownBackendError,
    UnknownSessionError,
)
from .rng import mix, scramble

DEFAULT_MALFORMED_RETRIES = 2


def derive_episode_seed(base_seed: int, episode_index: int) -> int:
    """Per-episode session seed; shared by the generator and batch rollouts."""
    return mix(base_seed, episode_index)


@dataclass(frozen=True)
class StepRequest:
    at: Timestamp
    actions: tuple[Action, ...]

    def __post_init__(self):
        object.__setattr__(self, "at", int(self.at))
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise ValueError("a step needs at least one action")


@dataclass(frozen=True)
class Session:
    id: str
    state: PatientState
    backend_ref: str
    seed: int
    start: Timestamp
    parent: tuple[str, int] | None = None

    @property
    def history_length(self) -> int:
        return len(self.state.history)


class RolloutMode(str, Enum):
    FULL_TRAJECTORY = "full"
    NEXT_STEP = "next"


@dataclass(frozen=True)
class RolloutResult:
    predicted: Episode
    source: Episode
    mode: RolloutMode
    backend_id: str
    seed: int


def _outcome_problem(action: Action, outcome: Outcome) -> str | None:
    if action.kind is ActionKind.INTERVENTION:
        if not isinstance(outcome, EmptyOutcome):
            return f"intervention {action.code!r} got a non-empty outcome"
        return None
    if isinstance(outcome, EmptyOutcome):
        return f"inquiry {action.code!r} got an empty outcome"
    if isinstance(outcome, NumericOutcome):
        if not math.isfinite(outcome.value):
            return f"inquiry {action.code!r} got a non-finite value"
        return None
    if isinstance(outcome, LabelOutcome):
        return None
    return f"inquiry {action.code!r} got an unrecognized outcome type"


def predict_outcomes(
    backend: OutcomeModel,
    state: PatientState,
    actions: Sequence[Action],
    session_seed: int,
    malformed_retries: int = DEFAULT_MALFORMED_RETRIES,
) -> list[Outcome]:
    """Invoke the backend and enforce the per-action outcome contract.

    Malformed responses (wrong count, kind-coupling breaks, non-finite
    values) are retried up to malformed_retries times; backend transport
    or parse failures are not retried here and surface as BackendFailure.
    """
    last_problem = ""
    for _ in range(malformed_retries + 1):
        try:
            outcomes = list(backend.predict(state, actions, session_seed=session_seed))
        except BackendError as exc:
            raise BackendFailureError(f"backend {backend.id!r}: {exc}") from exc
        if len(outcomes) != len(actions):
            last_problem = (
                f"{len(outcomes)} outcomes for {len(actions)} actions"
            )
            continue
        problem = None
        for action, outcome in zip(actions, outcomes):
            problem = _outcome_problem(action, outcome)
            if problem:
                break
        if problem is None:
            return outcomes
        last_problem = problem
    raise MalformedOutcomeError(f"backend {backend.id!r}: {last_problem}")


class Engine:
    """Resolves backends and applies session transitions."""

    def __init__(
        self,
        backends: Mapping[str, OutcomeModel],
        malformed_retries: int = DEFAULT_MALFORMED_RETRIES,
        id_seed: int = 0,
    ):
        self._backends = dict(backends)
        self._malformed_retries = malformed_retries
        self._id_seed = id_seed
        self._id_counter = 0
        self._id_lock = threading.Lock()

    @property
    def backends(self) -> Mapping[str, OutcomeModel]:
        return dict(self._backends)

    def resolve(self, backend_ref: str) -> OutcomeModel:
        model = self._backends.get(backend_ref)
        if model is None:
            raise UnknownBackendError(f"no backend registered as {backend_ref!r}")
        return model

    def _new_id(self) -> str:
        with self._id_lock:
            self._id_counter += 1
            token = scramble(mix(self._id_seed, self._id_counter))
        return f"s-{token & 0xFFFFFFFFFF:010x}"

    def init_session(
        self,
        profile: StaticProfile,
        diagnostics: DiagnosticProfile,
        start: Timestamp,
        backend_ref: str,
        seed: int = 0,
    ) -> Session:
        self.resolve(backend_ref)
        state = PatientState(
            now=start, profile=profile, diagnostics=diagnostics, history=()
        )
        return Session(
            id=self._new_id(),
            state=state,
            backend_ref=backend_ref,
            seed=seed,
            start=start,
        )

    def step(self, session: Session, req: StepRequest) -> tuple[EventSet, Session]:
        if req.at <= session.state.now:
            raise NonMonotonicTimeError(
                f"step at t={req.at} but session is at t={session.state.now}"
            )
        backend = self.resolve(session.backend_ref)
        state = PatientState(
            now=req.at,
            profile=session.state.profile,
            diagnostics=session.state.diagnostics,
            history=session.state.history,
        )
        outcomes = predict_outcomes(
            backend, state, req.actions, session.seed, self._malformed_retries
        )
        event_set = EventSet(
            timestamp=req.at,
            events=tuple(Event(a, o) for a, o in zip(req.actions, outcomes)),
        )
        new_state = PatientState(
            now=req.at,
            profile=state.profile,
            diagnostics=state.diagnostics,
            history=state.history + (event_set,),
        )
        return event_set, Session(
            id=session.id,
            state=new_state,
            backend_ref=session.backend_ref,
            seed=session.seed,
            start=session.start,
            parent=session.parent,
        )

    def branch(self, session: Session, at_step: int) -> Session:
        if not (0 <= at_step <= session.history_length):
            raise OutOfRangeError(
                f"branch step {at_step} outside [0, {session.history_length}]"
            )
        history = session.state.history[:at_step]
        now = history[-1].timestamp if history else session.start
        state = PatientState(
            now=now,
            profile=session.state.profile,
            diagnostics=session.state.diagnostics,
            history=history,
        )
        return Session(
            id=self._new_id(),
            state=state,
            backend_ref=session.backend_ref,
            seed=session.seed,
            start=session.start,
            parent=(session.id, at_step),
        )


# --- session store ---------------------------------------------------------------


@dataclass
class _StoreEntry:
    session: Session
    last_access: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    """In-memory session map with per-id step serialization and idle expiry.

    Locks are taken without blocking: a second concurrent writer gets
    ConcurrentStepError instead of queueing, so one writer per session wins.
    """

    def __init__(
        self,
        ttl_seconds: float | None = None,
        clock: Callable[[], float] = time.monotonic,
    ):
        self._entries: dict[str, _StoreEntry] = {}
        self._ttl = ttl_seconds
        self._clock = clock
        self._mutex = threading.Lock()

    def sweep(self) -> list[str]:
        """Drop sessions idle past the TTL; returns the expired ids."""
        if self._ttl is None:
            return []
        cutoff = self._clock() - self._ttl
        with self._mutex:
            expired = [
                sid
                for sid, entry in self._entries.items()
                if entry.last_access < cutoff and not entry.lock.locked()
            ]
            for sid in expired:
                del self._entries[sid]
        return expired

    def put(self, session: Session) -> None:
        now = self._clock()
        with self._mutex:
            entry = self._entries.get(session.id)
            if entry is None:
                self._entries[session.id] = _StoreEntry(session, now)
            else:
                entry.session = session
                entry.last_access = now

    def get(self, session_id: str) -> Session:
        self.sweep()
        with self._mutex:
            entry = self._entries.get(session_id)
            if entry is None:
                raise UnknownSessionError(f"no session {session_id!r}")
            entry.last_access = self._clock()
            return entry.session

    def ids(self) -> list[str]:
        with self._mutex:
            return list(self._entries)

    def __len__(self) -> int:
        with self._mutex:
            return len(self._entries)

    @contextmanager
    def exclusive(self, session_id: str) -> Iterator[Session]:
        """Non-blocking per-session write lock around a step transaction."""
        self.sweep()
        with self._mutex:
            entry = self._entries.get(session_id)
            if entry is None:
                raise UnknownSessionError(f"no session {session_id!r}")
        if not entry.lock.acquire(blocking=False):
            raise ConcurrentStepError(
                f"session {session_id!r} has a step in flight"
            )
        try:
            entry.last_access = self._clock()
            yield entry.session
        finally:
            entry.lock.release()


# --- rollouts -------------------------------------------------------------------


def _predict_set(
    backend: OutcomeModel,
    source: Episode,
    src_set: EventSet,
    history: tuple[EventSet, ...],
    seed: int,
    step_index: int,
) -> EventSet:
    actions = [event.action for event in src_set.events]
    state = PatientState(
        now=src_set.timestamp,
        profile=source.profile,
        diagnostics=source.diagnostics,
        history=history,
    )
    try:
        outcomes = predict_outcomes(backend, state, actions, seed)
    except (EngineError, BackendError) as exc:
        raise RolloutStepError(step_index, str(exc)) from exc
    return EventSet(
        timestamp=src_set.timestamp,
        events=tuple(Event(a, o) for a, o in zip(actions, outcomes)),
    )


def _as_result(
    source: Episode,
    predicted_sets: Sequence[EventSet],
    mode: RolloutMode,
    backend: OutcomeModel,
    seed: int,
) -> RolloutResult:
    predicted = Episode(
        subject_id=source.subject_id,
        admission_id=source.admission_id,
        profile=source.profile,
        diagnostics=source.diagnostics,
        timeline=tuple(predicted_sets),
        length_of_stay=source.length_of_stay,
    )
    return RolloutResult(
        predicted=predicted,
        source=source,
        mode=mode,
        backend_id=backend.id,
        seed=seed,
    )


def rollout_full(source: Episode, backend: OutcomeModel, seed: int = 0) -> RolloutResult:
    """Autoregressive replay: each step sees the model's own prior outputs."""
    history: tuple[EventSet, ...] = ()
    predicted: list[EventSet] = []
    for index, src_set in enumerate(source.timeline):
        new_set = _predict_set(backend, source, src_set, history, seed, index)
        predicted.append(new_set)
        history = history + (new_set,)
    return _as_result(source, predicted, RolloutMode.FULL_TRAJECTORY, backend, seed)


def rollout_next_step(
    source: Episode, backend: OutcomeModel, seed: int = 0
) -> RolloutResult:
    """Teacher-forced replay: each step sees the ground-truth prefix."""
    predicted: list[EventSet] = []
    for index, src_set in enumerate(source.timeline):
        new_set = _predict_set(
            backend, source, src_set, tuple(source.timeline[:index]), seed, index
        )
        predicted.append(new_set)
    return _as_result(source, predicted, RolloutMode.NEXT_STEP, backend, seed)


def rollout(
    source: Episode, backend: OutcomeModel, mode: RolloutMode, seed: int = 0
) -> RolloutResult:
    if mode is RolloutMode.FULL_TRAJECTORY:
        return rollout_full(source, backend, seed)
    return rollout_next_step(source, backend, seed)
