"""Deterministic synthetic physiology used as desk-scale ground truth.

Each analyte follows first-order relaxation toward its baseline:

    x(t + d) = baseline + (x(t) - baseline) * exp(-decay_rate * d_hours)

Interventions add their configured delta to the target analyte's latent
instantaneously at the event timestamp; the delta is visible to any reading
at that same timestamp and relaxes away afterwards. Inquiries never move
the latent. Label outcomes are threshold rules on a driver analyte.

Observed values are latent * (1 + eps) with eps a zero-mean Gaussian of
scale noise_sigma drawn from a keyed counter-based stream, so outputs are
bit-reproducible for a fixed (config seed, session seed, step count, action
index) regardless of call order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from ..domain import (
    EMPTY,
    Action,
    ActionKind,
    EventSet,
    LabelOutcome,
    NumericOutcome,
    Outcome,
    PatientState,
    Timestamp,
    canonicalize_code,
)
from ..errors import ConfigError, UnknownAnalyteError, UnsupportedActionKindError
from ..rng import gauss_at, mix
from .base import OutcomeModel

MINUTES_PER_HOUR = 60.0


@dataclass(frozen=True)
class AnalyteSpec:
    baseline: float
    unit: str = ""
    decay_rate: float = 0.0  # per hour, toward baseline

    def __post_init__(self):
        if self.decay_rate < 0:
            raise ConfigError(f"decay_rate must be >= 0 (got {self.decay_rate})")


@dataclass(frozen=True)
class InterventionEffect:
    target: str  # analyte code
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "target", canonicalize_code(self.target))


@dataclass(frozen=True)
class LabelRule:
    driver: str  # analyte code whose latent is thresholded
    threshold: float
    positive: frozenset[str]
    negative: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "driver", canonicalize_code(self.driver))
        object.__setattr__(
            self, "positive", frozenset(canonicalize_code(v) for v in self.positive)
        )
        object.__setattr__(
            self, "negative", frozenset(canonicalize_code(v) for v in self.negative)
        )


@dataclass(frozen=True)
class OracleConfig:
    analytes: Mapping[str, AnalyteSpec]
    interventions: Mapping[str, tuple[InterventionEffect, ...]] = field(
        default_factory=dict
    )
    label_rules: Mapping[str, LabelRule] = field(default_factory=dict)
    noise_sigma: float = 0.0  # fraction of the latent value
    seed: int = 0

    def __post_init__(self):
        analytes = {canonicalize_code(k): v for k, v in dict(self.analytes).items()}
        interventions = {
            canonicalize_code(k): tuple(v)
            for k, v in dict(self.interventions).items()
        }
        rules = {canonicalize_code(k): v for k, v in dict(self.label_rules).items()}
        object.__setattr__(self, "analytes", analytes)
        object.__setattr__(self, "interventions", interventions)
        object.__setattr__(self, "label_rules", rules)
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0 (got {self.noise_sigma})")
        for code, effects in interventions.items():
            for effect in effects:
                if effect.target not in analytes:
                    raise ConfigError(
                        f"intervention {code!r} targets undeclared analyte "
                        f"{effect.target!r}"
                    )
        for code, rule in rules.items():
            if rule.driver not in analytes:
                raise ConfigError(
                    f"label rule {code!r} drives undeclared analyte {rule.driver!r}"
                )

    def to_dict(self) -> dict:
        return {
            "analytes": {
                code: {
                    "baseline": spec.baseline,
                    "unit": spec.unit,
                    "decay_rate": spec.decay_rate,
                }
                for code, spec in sorted(self.analytes.items())
            },
            "interventions": {
                code: [{"target": e.target, "delta": e.delta} for e in effects]
                for code, effects in sorted(self.interventions.items())
            },
            "label_rules": {
                code: {
                    "driver": rule.driver,
                    "threshold": rule.threshold,
                    "positive": sorted(rule.positive),
                    "negative": sorted(rule.negative),
                }
                for code, rule in sorted(self.label_rules.items())
            },
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "OracleConfig":
        try:
            analytes = {
                code: AnalyteSpec(
                    baseline=float(spec["baseline"]),
                    unit=spec.get("unit", ""),
                    decay_rate=float(spec.get("decay_rate", 0.0)),
                )
                for code, spec in payload.get("analytes", {}).items()
            }
            interventions = {
                code: tuple(
                    InterventionEffect(target=e["target"], delta=float(e["delta"]))
                    for e in effects
                )
                for code, effects in payload.get("interventions", {}).items()
            }
            rules = {
                code: LabelRule(
                    driver=r["driver"],
                    threshold=float(r["threshold"]),
                    positive=frozenset(r.get("positive", ())),
                    negative=frozenset(r.get("negative", ())),
                )
                for code, r in payload.get("label_rules", {}).items()
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad oracle config: {exc}") from exc
        return cls(
            analytes=analytes,
            interventions=interventions,
            label_rules=rules,
            noise_sigma=float(payload.get("noise_sigma", 0.0)),
            seed=int(payload.get("seed", 0)),
        )


def _relax(value: float, baseline: float, decay_rate: float, minutes: float) -> float:
    if minutes <= 0 or decay_rate == 0.0 or value == baseline:
        return value
    return baseline + (value - baseline) * math.exp(
        -decay_rate * minutes / MINUTES_PER_HOUR
    )


def latents_at(
    cfg: OracleConfig,
    history: Sequence[EventSet],
    at: Timestamp,
    codes: Iterable[str],
) -> dict[str, float]:
    """Latent values of the requested analytes at time `at`, in one history pass.

    Relaxation is applied lazily per analyte between its influence times;
    exponential decay composes exactly across segments, so the result matches
    the closed form over each interval.
    """
    tracked: dict[str, tuple[float, int]] = {}
    for code in codes:
        spec = cfg.analytes.get(code)
        if spec is None:
            raise UnknownAnalyteError(f"analyte {code!r} is not declared")
        tracked[code] = (spec.baseline, 0)

    for event_set in history:
        ts = event_set.timestamp
        if ts > at:
            break
        for event in event_set.events:
            if event.action.kind is not ActionKind.INTERVENTION:
                continue
            for effect in cfg.interventions.get(event.action.code, ()):
                entry = tracked.get(effect.target)
                if entry is None:
                    continue
                value, since = entry
                spec = cfg.analytes[effect.target]
                value = _relax(value, spec.baseline, spec.decay_rate, ts - since)
                tracked[effect.target] = (value + effect.delta, ts)

    result: dict[str, float] = {}
    for code, (value, since) in tracked.items():
        spec = cfg.analytes[code]
        result[code] = _relax(value, spec.baseline, spec.decay_rate, at - since)
    return result


def oracle_latent(
    cfg: OracleConfig, code: str, history: Sequence[EventSet], at: Timestamp
) -> float:
    """Closed-form latent of one analyte at time `at` given the event history."""
    code = canonicalize_code(code)
    return latents_at(cfg, history, at, [code])[code]


def _noise_key(cfg: OracleConfig, session_seed: int, step_count: int, index: int) -> int:
    return mix(cfg.seed, session_seed, step_count, index)


def _driver_codes(cfg: OracleConfig, actions: Sequence[Action]) -> set[str]:
    needed: set[str] = set()
    for action in actions:
        if action.kind is not ActionKind.INQUIRY:
            continue
        if action.code in cfg.analytes:
            needed.add(action.code)
        elif action.code in cfg.label_rules:
            needed.add(cfg.label_rules[action.code].driver)
        else:
            raise UnknownAnalyteError(
                f"inquiry {action.code!r} matches no analyte or label rule"
            )
    return needed


def oracle_predict(
    cfg: OracleConfig,
    state: PatientState,
    actions: Sequence[Action],
    session_seed: int = 0,
) -> list[Outcome]:
    """One outcome per action at state.now under the configured dynamics.

    Interventions submitted alongside inquiries take effect at state.now,
    so readings in the same event set already include their deltas.
    """
    latents = latents_at(cfg, state.history, state.now, _driver_codes(cfg, actions))
    for action in actions:
        if action.kind is ActionKind.INTERVENTION:
            for effect in cfg.interventions.get(action.code, ()):
                if effect.target in latents:
                    latents[effect.target] += effect.delta
    step_count = len(state.history)
    outcomes: list[Outcome] = []
    for index, action in enumerate(actions):
        if action.kind is ActionKind.INTERVENTION:
            outcomes.append(EMPTY)
        elif action.kind is ActionKind.INQUIRY:
            outcomes.append(
                _observe(cfg, action, latents, session_seed, step_count, index)
            )
        else:
            raise UnsupportedActionKindError(f"unsupported action kind {action.kind!r}")
    return outcomes


def _observe(
    cfg: OracleConfig,
    action: Action,
    latents: Mapping[str, float],
    session_seed: int,
    step_count: int,
    index: int,
) -> Outcome:
    rule = cfg.label_rules.get(action.code)
    if rule is not None:
        positive = latents[rule.driver] > rule.threshold
        return LabelOutcome(rule.positive if positive else rule.negative)
    spec = cfg.analytes[action.code]
    value = latents[action.code]
    if cfg.noise_sigma > 0.0:
        eps = gauss_at(
            _noise_key(cfg, session_seed, step_count, index), 0.0, cfg.noise_sigma
        )
        value *= 1.0 + eps
    return NumericOutcome(value, spec.unit)


class OracleModel(OutcomeModel):
    """Backend wrapper over the synthetic dynamics."""

    def __init__(self, config: OracleConfig, model_id: str = "oracle"):
        self.config = config
        self.id = model_id
        self.capabilities = frozenset({"numeric", "label"})

    def predict(
        self,
        state: PatientState,
        actions: Sequence[Action],
        *,
        session_seed: int = 0,
    ) -> list[Outcome]:
        return oracle_predict(self.config, state, actions, session_seed)


class AnchoredOracleModel(OutcomeModel):
    """A deliberately imperfect simulator for error-accumulation studies.

    Instead of evaluating the true latent, it anchors each analyte estimate
    to the last value recorded in the conditioning history and projects it
    forward, crediting later interventions only a fraction of their true
    effect (intervention_response). Conditioned on its own past predictions
    (full-trajectory rollout), anchor errors therefore compound; conditioned
    on ground truth (next-step rollout), errors stay one step deep. Noise
    keys match the plain oracle, so at equal step counts the two regimes
    draw identical perturbations.
    """

    def __init__(
        self,
        config: OracleConfig,
        intervention_response: float = 0.35,
        model_id: str = "anchored-oracle",
    ):
        if not (0.0 <= intervention_response <= 1.0):
            raise ConfigError(
                f"intervention_response must be in [0, 1] "
                f"(got {intervention_response})"
            )
        self.config = config
        self.intervention_response = intervention_response
        self.id = model_id
        self.capabilities = frozenset({"numeric", "label"})

    def predict(
        self,
        state: PatientState,
        actions: Sequence[Action],
        *,
        session_seed: int = 0,
    ) -> list[Outcome]:
        cfg = self.config
        estimates = {
            code: self._estimate(code, state)
            for code in _driver_codes(cfg, actions)
        }
        # Same-set interventions are visible but likewise under-credited.
        for action in actions:
            if action.kind is ActionKind.INTERVENTION:
                for effect in cfg.interventions.get(action.code, ()):
                    if effect.target in estimates:
                        estimates[effect.target] += (
                            self.intervention_response * effect.delta
                        )
        step_count = len(state.history)
        outcomes: list[Outcome] = []
        for index, action in enumerate(actions):
            if action.kind is ActionKind.INTERVENTION:
                outcomes.append(EMPTY)
                continue
            if action.kind is not ActionKind.INQUIRY:
                raise UnsupportedActionKindError(
                    f"unsupported action kind {action.kind!r}"
                )
            rule = cfg.label_rules.get(action.code)
            if rule is not None:
                positive = estimates[rule.driver] > rule.threshold
                outcomes.append(LabelOutcome(rule.positive if positive else rule.negative))
                continue
            value = estimates[action.code]
            if cfg.noise_sigma > 0.0:
                eps = gauss_at(
                    _noise_key(cfg, session_seed, step_count, index),
                    0.0,
                    cfg.noise_sigma,
                )
                value *= 1.0 + eps
            outcomes.append(NumericOutcome(value, cfg.analytes[action.code].unit))
        return outcomes

    def _estimate(self, code: str, state: PatientState) -> float:
        cfg = self.config
        spec = cfg.analytes[code]
        anchor_value = spec.baseline
        anchor_ts = 0
        anchored = False
        # Latest recorded numeric reading wins; history is chronological.
        for event_set in state.history:
            for event in event_set.events:
                if (
                    event.action.kind is ActionKind.INQUIRY
                    and event.action.code == code
                    and isinstance(event.outcome, NumericOutcome)
                ):
                    anchor_value = event.outcome.value
                    anchor_ts = event_set.timestamp
                    anchored = True
        value, since = anchor_value, anchor_ts
        for event_set in state.history:
            ts = event_set.timestamp
            # Effects at the anchor's own timestamp are already reflected in
            # the recorded reading (readings see same-instant deltas).
            if anchored and ts <= anchor_ts:
                continue
            if ts > state.now:
                break
            for event in event_set.events:
                if event.action.kind is not ActionKind.INTERVENTION:
                    continue
                for effect in cfg.interventions.get(event.action.code, ()):
                    if effect.target != code:
                        continue
                    value = _relax(value, spec.baseline, spec.decay_rate, ts - since)
                    value += self.intervention_response * effect.delta
                    since = ts
        return _relax(value, spec.baseline, spec.decay_rate, state.now - since)


# --- a ready-made small world -----------------------------------------------------

SURGE_SUFFIX = " surge"

SURGE_DELTA_FRACTION = 0.85


def default_oracle_config(noise_sigma: float = 0.0, seed: int = 0) -> OracleConfig:
    """Six-analyte toy physiology with routine and surge interventions.

    Surge interventions exist for every analyte and add 85% of baseline,
    sized so a reading taken near baseline jumps well past the +50% mark
    while the subsequent full relaxation back to baseline never exceeds a
    -50% change between consecutive readings.
    """
    analytes = {
        "sodium": AnalyteSpec(140.0, "mEq/L", 0.05),
        "potassium": AnalyteSpec(4.2, "mEq/L", 0.08),
        "creatinine": AnalyteSpec(1.0, "mg/dL", 0.05),
        "wbc count": AnalyteSpec(7.5, "10^9/L", 0.06),
        "lactate": AnalyteSpec(1.5, "mmol/L", 0.10),
        "heart rate": AnalyteSpec(80.0, "bpm", 0.12),
    }
    interventions: dict[str, tuple[InterventionEffect, ...]] = {
        "normal saline bolus": (
            InterventionEffect("sodium", 2.0),
            InterventionEffect("heart rate", -5.0),
            InterventionEffect("lactate", -0.15),
        ),
        "potassium chloride": (InterventionEffect("potassium", 0.5),),
        "furosemide": (
            InterventionEffect("sodium", 1.5),
            InterventionEffect("potassium", -0.4),
        ),
        "antibiotics course": (InterventionEffect("wbc count", -1.0),),
        "beta blocker": (InterventionEffect("heart rate", -10.0),),
    }
    for code, spec in analytes.items():
        interventions[code + SURGE_SUFFIX] = (
            InterventionEffect(code, SURGE_DELTA_FRACTION * spec.baseline),
        )
    label_rules = {
        "blood culture": LabelRule(
            driver="wbc count",
            threshold=11.0,
            positive=frozenset({"e. coli", "growth"}),
            negative=frozenset({"no growth"}),
        ),
        "lactate flag": LabelRule(
            driver="lactate",
            threshold=2.0,
            positive=frozenset({"elevated"}),
            negative=frozenset({"normal"}),
        ),
    }
    return OracleConfig(
        analytes=analytes,
        interventions=interventions,
        label_rules=label_rules,
        noise_sigma=noise_sigma,
        seed=seed,
    )


def default_reference_ranges() -> dict[str, dict]:
    """Plausible normal ranges for the default analytes, as a plain payload."""
    return {
        "sodium": {"low": 135.0, "high": 145.0, "unit": "mEq/L"},
        "potassium": {"low": 3.5, "high": 5.0, "unit": "mEq/L"},
        "creatinine": {"low": 0.6, "high": 1.3, "unit": "mg/dL"},
        "wbc count": {"low": 4.0, "high": 11.0, "unit": "10^9/L"},
        "lactate": {"low": 0.5, "high": 2.0, "unit": "mmol/L"},
        "heart rate": {"low": 60.0, "high": 100.0, "unit": "bpm"},
    }
