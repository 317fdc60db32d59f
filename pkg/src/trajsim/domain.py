"""Core domain types: actions, outcomes, event sets, patient state, episodes.

All types are immutable values; constructors canonicalize representation
(code case-folding, label deduplication, canonical event ordering) but do
not enforce cross-field rules — those are reported as data by
``validate_episode`` so ingestion can surface problems without raising.

Timestamps are integer minutes since admission; 0 is admission time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import EmptyCodeError

Timestamp = int  # minutes since admission

MINUTES_PER_DAY = 1440.0


def canonicalize_code(raw: str) -> str:
    """Trim, collapse internal whitespace to single spaces, and case-fold."""
    token = " ".join(raw.split()).casefold()
    if not token:
        raise EmptyCodeError(f"code {raw!r} is empty after canonicalization")
    return token


class ActionKind(str, Enum):
    INQUIRY = "inquiry"
    INTERVENTION = "intervention"


@dataclass(frozen=True)
class Action:
    """A clinical order: a passive inquiry or a state-altering intervention."""

    kind: ActionKind
    code: str
    display_name: str = ""
    detail: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ActionKind(self.kind))
        object.__setattr__(self, "code", canonicalize_code(self.code))
        object.__setattr__(self, "detail", dict(self.detail))

    def identity(self) -> tuple[str, str, str]:
        """Stable identity used for matching and canonical ordering."""
        return (self.kind.value, self.code, dumps_canonical(self.detail))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Action):
            return NotImplemented
        return (
            self.identity() == other.identity()
            and self.display_name == other.display_name
        )

    def __hash__(self) -> int:
        return hash(self.identity())


@dataclass(frozen=True)
class NumericOutcome:
    value: float
    unit: str = ""

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class LabelOutcome:
    values: frozenset[str] = frozenset()

    def __post_init__(self):
        vals = self.values
        if isinstance(vals, str):
            vals = [vals]
        object.__setattr__(
            self, "values", frozenset(canonicalize_code(v) for v in vals)
        )


@dataclass(frozen=True)
class EmptyOutcome:
    pass


Outcome = NumericOutcome | LabelOutcome | EmptyOutcome

EMPTY = EmptyOutcome()


@dataclass(frozen=True)
class Event:
    """One action paired with its outcome."""

    action: Action
    outcome: Outcome

    def sort_key(self) -> tuple:
        # Canonical within-set order: kind, code, detail; outcome serialization
        # then display name break remaining ties so any permutation of the
        # same events serializes identically.
        return self.action.identity() + (
            dumps_canonical(outcome_to_dict(self.outcome)),
            self.action.display_name,
        )


@dataclass(frozen=True)
class EventSet:
    """All events sharing one timestamp, held in canonical order."""

    timestamp: Timestamp
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "timestamp", int(self.timestamp))
        ordered = tuple(sorted(self.events, key=Event.sort_key))
        object.__setattr__(self, "events", ordered)


@dataclass(frozen=True)
class StaticProfile:
    """Static demographics; text fields are always present, possibly empty."""

    age: int
    gender: str = ""
    allergies: str = ""
    chief_complaint: str = ""
    history_summary: str = ""


@dataclass(frozen=True)
class DiagnosisEntry:
    content: str
    reason: str = ""


@dataclass(frozen=True)
class DiagnosticProfile:
    """Primary diagnosis plus secondary diagnoses in source order."""

    primary: DiagnosisEntry
    secondary: tuple[DiagnosisEntry, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "secondary", tuple(self.secondary))


@dataclass(frozen=True)
class PatientState:
    """The simulation state: current time, static context, and prior events."""

    now: Timestamp
    profile: StaticProfile
    diagnostics: DiagnosticProfile
    history: tuple[EventSet, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "now", int(self.now))
        object.__setattr__(self, "history", tuple(self.history))


@dataclass(frozen=True)
class Episode:
    """One hospitalization: static context plus a chronological timeline."""

    subject_id: str
    admission_id: str
    profile: StaticProfile
    diagnostics: DiagnosticProfile
    timeline: tuple[EventSet, ...] = ()
    length_of_stay: float = 0.0  # days

    def __post_init__(self):
        object.__setattr__(self, "timeline", tuple(self.timeline))
        object.__setattr__(self, "length_of_stay", float(self.length_of_stay))


# --- validation ---------------------------------------------------------------

# Slack for length_of_stay vs. the last timestamp: callers may round the stay
# to two decimals, so allow half of that granularity.
_LOS_SLACK_DAYS = 0.005


def validate_episode(episode: Episode) -> list[str]:
    """Check every invariant; returns one message per violation, empty if clean."""
    violations: list[str] = []
    if not episode.subject_id:
        violations.append("Episode: subject_id must be non-empty")
    if not episode.admission_id:
        violations.append("Episode: admission_id must be non-empty")

    profile = episode.profile
    if not (0 <= profile.age <= 130):
        violations.append(f"StaticProfile: age in [0, 130] (got {profile.age})")

    prev_ts: int | None = None
    for set_index, event_set in enumerate(episode.timeline):
        ts = event_set.timestamp
        if ts < 0:
            violations.append(f"Timestamp: non-negative (set {set_index}: {ts})")
        if prev_ts is not None and ts <= prev_ts:
            violations.append(
                f"timeline: strictly increasing (set {set_index}: {prev_ts} -> {ts})"
            )
        prev_ts = ts
        if not event_set.events:
            violations.append(f"EventSet: events non-empty (set {set_index})")
        for event in event_set.events:
            violations.extend(_validate_event(event, set_index))

    if episode.timeline:
        last_days = episode.timeline[-1].timestamp / MINUTES_PER_DAY
        if episode.length_of_stay < last_days - _LOS_SLACK_DAYS:
            violations.append(
                "Episode: length_of_stay must cover the last timeline timestamp "
                f"({episode.length_of_stay} d < {last_days:.4f} d)"
            )
    return violations


def _validate_event(event: Event, set_index: int) -> list[str]:
    out: list[str] = []
    action, outcome = event.action, event.outcome
    if action.kind is ActionKind.INTERVENTION and not isinstance(outcome, EmptyOutcome):
        out.append(
            "Event: intervention must have Empty outcome "
            f"(set {set_index}, code {action.code!r})"
        )
    if action.kind is ActionKind.INQUIRY and isinstance(outcome, EmptyOutcome):
        out.append(
            "Event: inquiry must have Numeric or Label outcome "
            f"(set {set_index}, code {action.code!r})"
        )
    if isinstance(outcome, NumericOutcome) and not math.isfinite(outcome.value):
        out.append(
            f"Outcome: numeric value must be finite (set {set_index}, code {action.code!r})"
        )
    return out


# --- serialization --------------------------------------------------------------

def dumps_canonical(obj: Any) -> str:
    """Canonical JSON: sorted keys, compact separators, UTF-8 passthrough."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def action_to_dict(action: Action) -> dict:
    return {
        "kind": action.kind.value,
        "code": action.code,
        "display_name": action.display_name,
        "detail": dict(sorted(action.detail.items())),
    }


def action_from_dict(d: Mapping[str, Any]) -> Action:
    return Action(
        kind=ActionKind(d["kind"]),
        code=d["code"],
        display_name=d.get("display_name", ""),
        detail=d.get("detail", {}),
    )


def outcome_to_dict(outcome: Outcome) -> dict:
    if isinstance(outcome, NumericOutcome):
        return {"variant": "numeric", "value": outcome.value, "unit": outcome.unit}
    if isinstance(outcome, LabelOutcome):
        return {"variant": "label", "values": sorted(outcome.values)}
    if isinstance(outcome, EmptyOutcome):
        return {"variant": "empty"}
    raise TypeError(f"not an outcome: {outcome!r}")


def outcome_from_dict(d: Mapping[str, Any]) -> Outcome:
    variant = d.get("variant")
    if variant == "numeric":
        return NumericOutcome(value=d["value"], unit=d.get("unit", ""))
    if variant == "label":
        return LabelOutcome(values=frozenset(d.get("values", ())))
    if variant == "empty":
        return EMPTY
    raise ValueError(f"unknown outcome variant: {variant!r}")


def event_set_to_dict(event_set: EventSet) -> dict:
    return {
        "timestamp": event_set.timestamp,
        "events": [
            {"action": action_to_dict(e.action), "outcome": outcome_to_dict(e.outcome)}
            for e in event_set.events
        ],
    }


def event_set_from_dict(d: Mapping[str, Any]) -> EventSet:
    return EventSet(
        timestamp=d["timestamp"],
        events=tuple(
            Event(action_from_dict(e["action"]), outcome_from_dict(e["outcome"]))
            for e in d["events"]
        ),
    )


def profile_to_dict(profile: StaticProfile) -> dict:
    return {
        "age": profile.age,
        "gender": profile.gender,
        "allergies": profile.allergies,
        "chief_complaint": profile.chief_complaint,
        "history_summary": profile.history_summary,
    }


def profile_from_dict(d: Mapping[str, Any]) -> StaticProfile:
    return StaticProfile(
        age=int(d["age"]),
        gender=d.get("gender", ""),
        allergies=d.get("allergies", ""),
        chief_complaint=d.get("chief_complaint", ""),
        history_summary=d.get("history_summary", ""),
    )


def diagnostics_to_dict(diag: DiagnosticProfile) -> dict:
    return {
        "primary": {"content": diag.primary.content, "reason": diag.primary.reason},
        "secondary": [
            {"content": s.content, "reason": s.reason} for s in diag.secondary
        ],
    }


def diagnostics_from_dict(d: Mapping[str, Any]) -> DiagnosticProfile:
    primary = d["primary"]
    return DiagnosticProfile(
        primary=DiagnosisEntry(primary["content"], primary.get("reason", "")),
        secondary=tuple(
            DiagnosisEntry(s["content"], s.get("reason", ""))
            for s in d.get("secondary", ())
        ),
    )


def episode_to_dict(episode: Episode) -> dict:
    return {
        "subject_id": episode.subject_id,
        "admission_id": episode.admission_id,
        "profile": profile_to_dict(episode.profile),
        "diagnostics": diagnostics_to_dict(episode.diagnostics),
        "timeline": [event_set_to_dict(s) for s in episode.timeline],
        "length_of_stay": episode.length_of_stay,
    }


def episode_from_dict(d: Mapping[str, Any]) -> Episode:
    return Episode(
        subject_id=d["subject_id"],
        admission_id=d["admission_id"],
        profile=profile_from_dict(d["profile"]),
        diagnostics=diagnostics_from_dict(d["diagnostics"]),
        timeline=tuple(event_set_from_dict(s) for s in d["timeline"]),
        length_of_stay=d["length_of_stay"],
    )


def episode_to_json(episode: Episode) -> str:
    return dumps_canonical(episode_to_dict(episode))


def episode_from_json(line: str) -> Episode:
    return episode_from_dict(json.loads(line))


def inquiries(actions: Iterable[Action]) -> list[Action]:
    return [a for a in actions if a.kind is ActionKind.INQUIRY]


def interventions(actions: Iterable[Action]) -> list[Action]:
    return [a for a in actions if a.kind is ActionKind.INTERVENTION]
