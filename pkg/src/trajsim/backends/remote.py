"""Chat-completion backend for driving external language-model simulators.

The request path is: render a prompt from a plain-text template, POST one
user message to an OpenAI-compatible /chat/completions endpoint, then parse
the first balanced JSON object out of the reply. Only parse failures are
retried (with a corrective instruction appended); transport and auth
failures surface immediately.
"""

from __future__ import annotations

import json
import math
import os
import re
import string
import threading
from dataclasses import dataclass
from importlib import resources
from typing import Any, Mapping, Sequence

import httpx

from ..domain import (
    EMPTY,
    Action,
    ActionKind,
    EmptyOutcome,
    Event,
    EventSet,
    LabelOutcome,
    NumericOutcome,
    Outcome,
    PatientState,
)
from ..errors import (
    AuthError,
    ConfigError,
    CountMismatchError,
    EmptyCodeError,
    ExhaustedRetriesError,
    NoStructuredBlockError,
    ReplyParseError,
    TransportError,
    TypeMismatchError,
    UnknownPlaceholderError,
)
from .base import OutcomeModel

PLACEHOLDERS = frozenset(
    {"profile", "diagnostics", "history", "now", "actions", "output_schema"}
)

NO_PRIOR_EVENTS = "no prior events"

DEFAULT_HISTORY_WINDOW = 64


@dataclass(frozen=True)
class RemoteConfig:
    endpoint_url: str
    model_name: str
    auth_token_env_var: str = ""
    temperature: float = 0.0
    max_retries: int = 2
    timeout_seconds: float = 30.0
    prompt_template_path: str = ""
    history_window: int = DEFAULT_HISTORY_WINDOW
    concurrency_limit: int = 4

    def __post_init__(self):
        if not self.endpoint_url:
            raise ConfigError("endpoint_url must be set")
        if not (math.isfinite(self.temperature) and self.temperature >= 0):
            raise ConfigError(f"temperature must be finite and >= 0 (got {self.temperature})")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0 (got {self.max_retries})")
        if self.concurrency_limit < 1:
            raise ConfigError("concurrency_limit must be >= 1")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "RemoteConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown remote config keys: {sorted(unknown)}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(f"bad remote config: {exc}") from exc


def default_template() -> str:
    return (
        resources.files("trajsim")
        .joinpath("templates/simulation_prompt.txt")
        .read_text(encoding="utf-8")
    )


def load_template(path: str = "") -> str:
    if not path:
        return default_template()
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


# --- prompt rendering ------------------------------------------------------------


def _template_identifiers(template: string.Template) -> set[str]:
    # string.Template.get_identifiers() arrives in 3.11; scan the pattern here.
    names: set[str] = set()
    for match in template.pattern.finditer(template.template):
        name = match.group("named") or match.group("braced")
        if name:
            names.add(name)
    return names


def describe_action(action: Action) -> str:
    text = f"[{action.kind.value}] {action.code}"
    if action.detail:
        detail = ", ".join(f"{k}={v}" for k, v in sorted(action.detail.items()))
        text += f" ({detail})"
    return text


def describe_outcome(outcome: Outcome) -> str:
    if isinstance(outcome, NumericOutcome):
        unit = f" {outcome.unit}" if outcome.unit else ""
        return f"{outcome.value!r}{unit}"
    if isinstance(outcome, LabelOutcome):
        return ", ".join(sorted(outcome.values)) if outcome.values else "(none)"
    if isinstance(outcome, EmptyOutcome):
        return "(state-altering, no value)"
    raise TypeError(f"not an outcome: {outcome!r}")


def _render_history(history: Sequence[EventSet], window: int) -> str:
    if not history:
        return NO_PRIOR_EVENTS
    recent = history[-window:] if window > 0 else history
    lines: list[str] = []
    elided = len(history) - len(recent)
    if elided > 0:
        lines.append(f"({elided} earlier event sets elided)")
    for event_set in recent:
        for event in event_set.events:
            lines.append(
                f"[t={event_set.timestamp}m] {describe_action(event.action)} "
                f"-> {describe_outcome(event.outcome)}"
            )
    return "\n".join(lines)


def _render_profile(state: PatientState) -> str:
    p = state.profile
    return (
        f"age: {p.age}; gender: {p.gender or 'unknown'}; "
        f"allergies: {p.allergies or 'none recorded'}; "
        f"chief complaint: {p.chief_complaint or 'none recorded'}; "
        f"history: {p.history_summary or 'none recorded'}"
    )


def _render_diagnostics(state: PatientState) -> str:
    d = state.diagnostics
    lines = [f"primary: {d.primary.content}"]
    if d.primary.reason:
        lines[0] += f" (reason: {d.primary.reason})"
    for entry in d.secondary:
        line = f"secondary: {entry.content}"
        if entry.reason:
            line += f" (reason: {entry.reason})"
        lines.append(line)
    return "\n".join(lines)


def _render_output_schema(actions: Sequence[Action]) -> str:
    lines = [
        "Reply with exactly one JSON object and nothing else before or after it.",
        f'Its keys must be the action numbers "1" through "{len(actions)}", nothing else.',
        'For an inquiry action, the entry is {"value": <number>, "unit": "<unit>"} '
        'for a numeric result, or {"labels": ["<finding>", ...]} for a discrete result.',
        "For an intervention action, the entry must be null (it alters state and "
        "returns no value).",
    ]
    intervention_numbers = [
        str(i) for i, a in enumerate(actions, start=1) if a.kind is ActionKind.INTERVENTION
    ]
    if intervention_numbers:
        lines.append(
            "Entries that must be null: " + ", ".join(intervention_numbers) + "."
        )
    return "\n".join(lines)


def render_prompt(
    template_text: str,
    state: PatientState,
    actions: Sequence[Action],
    history_window: int = DEFAULT_HISTORY_WINDOW,
) -> str:
    """Fill the template's named placeholders from the simulation state."""
    template = string.Template(template_text)
    unknown = _template_identifiers(template) - PLACEHOLDERS
    if unknown:
        raise UnknownPlaceholderError(
            f"template uses unknown placeholders: {sorted(unknown)} "
            f"(allowed: {sorted(PLACEHOLDERS)})"
        )
    actions_text = "\n".join(
        f"{i}. {describe_action(a)}" for i, a in enumerate(actions, start=1)
    )
    return template.safe_substitute(
        profile=_render_profile(state),
        diagnostics=_render_diagnostics(state),
        history=_render_history(state.history, history_window),
        now=str(state.now),
        actions=actions_text,
        output_schema=_render_output_schema(actions),
    )


# --- reply parsing ---------------------------------------------------------------


def first_json_block(text: str) -> Any:
    """Parse the first balanced JSON object embedded anywhere in the text."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for pos in range(start, len(text)):
            ch = text[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    candidate = text[start : pos + 1]
                    try:
                        return json.loads(candidate)
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    raise NoStructuredBlockError("reply contains no parseable JSON object")


_NUMERIC_STRING = re.compile(r"^\s*([+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\s*(.*)$")


def _coerce_number(value: Any) -> float | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        match = _NUMERIC_STRING.match(value)
        if match and not match.group(2).strip():
            return float(match.group(1))
    return None


def _parse_inquiry_entry(entry: Any, position: int) -> Outcome:
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        value = float(entry)
        if not math.isfinite(value):
            raise TypeMismatchError(f"entry {position}: non-finite numeric value")
        return NumericOutcome(value, "")
    if isinstance(entry, str):
        match = _NUMERIC_STRING.match(entry)
        if match:
            value = float(match.group(1))
            if not math.isfinite(value):
                raise TypeMismatchError(f"entry {position}: non-finite numeric value")
            return NumericOutcome(value, match.group(2).strip())
        raise TypeMismatchError(
            f"entry {position}: expected a number, got text {entry!r}"
        )
    if isinstance(entry, dict):
        if "value" in entry:
            value = _coerce_number(entry["value"])
            if value is None or not math.isfinite(value):
                raise TypeMismatchError(
                    f"entry {position}: 'value' must be a finite number, "
                    f"got {entry['value']!r}"
                )
            unit = entry.get("unit", "")
            if unit is None:
                unit = ""
            if not isinstance(unit, str):
                raise TypeMismatchError(f"entry {position}: 'unit' must be text")
            return NumericOutcome(value, unit)
        labels = entry.get("labels", entry.get("values"))
        if isinstance(labels, list):
            if not all(isinstance(v, str) for v in labels):
                raise TypeMismatchError(f"entry {position}: labels must be strings")
            try:
                return LabelOutcome(frozenset(labels))
            except EmptyCodeError as exc:
                raise TypeMismatchError(f"entry {position}: empty label") from exc
        raise TypeMismatchError(
            f"entry {position}: object needs 'value' or 'labels'"
        )
    if isinstance(entry, list):
        if all(isinstance(v, str) for v in entry) and entry:
            try:
                return LabelOutcome(frozenset(entry))
            except EmptyCodeError as exc:
                raise TypeMismatchError(f"entry {position}: empty label") from exc
    raise TypeMismatchError(f"entry {position}: cannot interpret {entry!r}")


def parse_model_reply(reply: str, actions: Sequence[Action]) -> list[Outcome]:
    """Map the reply's numbered entries onto outcomes, index-aligned."""
    block = first_json_block(reply)
    if not isinstance(block, dict):
        raise NoStructuredBlockError("reply's first JSON block is not an object")
    expected = {str(i) for i in range(1, len(actions) + 1)}
    present = set(block.keys())
    missing = expected - present
    extra = present - expected
    if missing or extra:
        raise CountMismatchError(
            f"expected entries {sorted(expected, key=int)}; "
            f"missing {sorted(missing, key=int) if missing else 'none'}, "
            f"unexpected {sorted(extra) if extra else 'none'}"
        )
    outcomes: list[Outcome] = []
    for position, action in enumerate(actions, start=1):
        entry = block[str(position)]
        if action.kind is ActionKind.INTERVENTION:
            is_empty = (
                entry is None
                or entry == {}
                or (isinstance(entry, dict) and set(entry) == {"value"} and entry["value"] is None)
            )
            if not is_empty:
                raise TypeMismatchError(
                    f"entry {position}: intervention must be null, got {entry!r}"
                )
            outcomes.append(EMPTY)
        else:
            outcomes.append(_parse_inquiry_entry(entry, position))
    return outcomes


# --- the HTTP client -------------------------------------------------------------

_CORRECTIVE = (
    "\n\nYour previous reply could not be used: {error}. "
    "Answer again. {schema}"
)


class RemoteModel(OutcomeModel):
    def __init__(
        self,
        config: RemoteConfig,
        model_id: str = "",
        transport: httpx.BaseTransport | None = None,
    ):
        self.config = config
        self.id = model_id or f"remote:{config.model_name}"
        self.capabilities = frozenset({"numeric", "label"})
        self._template = load_template(config.prompt_template_path)
        self._limiter = threading.Semaphore(config.concurrency_limit)
        self._client = httpx.Client(
            timeout=config.timeout_seconds, transport=transport
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RemoteModel":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _headers(self) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        env_var = self.config.auth_token_env_var
        if env_var:
            token = os.environ.get(env_var)
            if not token:
                raise AuthError(
                    f"auth token environment variable {env_var!r} is not set"
                )
            headers["authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt: str) -> str:
        """One chat-completion round trip; returns the assistant text."""
        payload = {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        }
        headers = self._headers()
        with self._limiter:
            try:
                response = self._client.post(
                    self.config.endpoint_url, json=payload, headers=headers
                )
            except httpx.HTTPError as exc:
                raise TransportError(f"request failed: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials ({response.status_code})")
        if response.status_code != 200:
            raise TransportError(
                f"endpoint returned {response.status_code}: {response.text[:200]}"
            )
        try:
            body = response.json()
            content = body["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion envelope: {exc}") from exc
        if not isinstance(content, str):
            raise TransportError("completion content is not text")
        return content

    def predict(
        self,
        state: PatientState,
        actions: Sequence[Action],
        *,
        session_seed: int = 0,
    ) -> list[Outcome]:
        base_prompt = render_prompt(
            self._template, state, actions, self.config.history_window
        )
        prompt = base_prompt
        last_error: ReplyParseError | None = None
        attempts = self.config.max_retries + 1
        for _ in range(attempts):
            reply = self.complete(prompt)
            try:
                return parse_model_reply(reply, actions)
            except ReplyParseError as exc:
                last_error = exc
                prompt = base_prompt + _CORRECTIVE.format(
                    error=exc, schema=_render_output_schema(actions)
                )
        raise ExhaustedRetriesError(attempts=attempts, last_error=last_error)


def remote_predict(
    cfg: RemoteConfig,
    state: PatientState,
    actions: Sequence[Action],
    session_seed: int = 0,
    transport: httpx.BaseTransport | None = None,
) -> list[Outcome]:
    """One-shot convenience wrapper around a temporary RemoteModel."""
    with RemoteModel(cfg, transport=transport) as model:
        return model.predict(state, actions, session_seed=session_seed)
