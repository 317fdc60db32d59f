"""Dataset construction: assembly, stats, filtering, splitting, generation.

The corpus-facing operations are deliberately two-phase where thresholds
are involved: compute_corpus_stats derives population statistics, and
filter_corpus freezes the derived thresholds into its report so a filter
run can be audited and re-checked byte-for-byte later.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field, fields as dataclass_fields
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .backends.oracle import (
    SURGE_SUFFIX,
    OracleConfig,
    latents_at,
    oracle_predict,
)
from .backends.remote import RemoteModel, first_json_block
from .domain import (
    Action,
    ActionKind,
    DiagnosisEntry,
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
    canonicalize_code,
)
from .engine import derive_episode_seed
from .errors import (
    ConfigError,
    DegenerateStratumWarning,
    EmptyCorpusError,
    SchemaViolationError,
)
from .rng import PortableRng, mix

log = logging.getLogger(__name__)

MIN_LOS_DAYS = 0.01  # intensity floor so division stays finite

STAT_METRICS = (
    "los_days",
    "total_events",
    "inquiry_events",
    "intervention_events",
    "event_intensity",
)

HISTOGRAM_BINS = 10


# --- episode assembly -------------------------------------------------------------


def _string_key(value: str) -> int:
    """Stable 64-bit key for a string (hash() is salted per process)."""
    digest = hashlib.sha256(value.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def assemble_episodes(
    static_records: Iterable[Mapping[str, Any]],
    event_logs: Iterable[Mapping[str, Any]],
) -> Iterator[Episode]:
    """Join static records with event rows into chronological episodes.

    Event rows need subject_id, admission_id, timestamp, code, kind, and an
    execution status; rows that are malformed, unexecuted, or exact
    duplicates are dropped and counted. Admissions without a static record
    are skipped with a logged count. Yields episodes sorted by
    (subject_id, admission_id).
    """
    statics: dict[tuple[str, str], Mapping[str, Any]] = {}
    for record in static_records:
        try:
            key = (str(record["subject_id"]), str(record["admission_id"]))
        except (KeyError, TypeError):
            log.warning("static record without subject/admission ids skipped")
            continue
        statics[key] = record

    events: dict[tuple[str, str], dict[int, list[Event]]] = {}
    seen: set[str] = set()
    dropped_malformed = 0
    dropped_duplicate = 0
    dropped_unexecuted = 0
    for row in event_logs:
        try:
            key = (str(row["subject_id"]), str(row["admission_id"]))
            timestamp = int(row["timestamp"])
            kind = ActionKind(row["kind"])
            code = str(row["code"])
            status = str(row.get("status", "executed")).casefold()
        except (KeyError, TypeError, ValueError):
            dropped_malformed += 1
            continue
        if timestamp < 0 or not code.strip():
            dropped_malformed += 1
            continue
        if status not in ("executed", "completed", "administered", "final"):
            dropped_unexecuted += 1
            continue
        fingerprint = json.dumps(
            {k: row[k] for k in sorted(row)}, sort_keys=True, default=str
        )
        if fingerprint in seen:
            dropped_duplicate += 1
            continue
        seen.add(fingerprint)

        outcome: Outcome
        if kind is ActionKind.INTERVENTION:
            outcome = EmptyOutcome()
        elif "value" in row and row["value"] is not None:
            try:
                outcome = NumericOutcome(float(row["value"]), str(row.get("unit", "")))
            except (TypeError, ValueError):
                dropped_malformed += 1
                continue
        elif "labels" in row and row["labels"]:
            try:
                outcome = LabelOutcome(frozenset(str(v) for v in row["labels"]))
            except Exception:
                dropped_malformed += 1
                continue
        else:
            dropped_malformed += 1
            continue

        detail = row.get("detail") or {}
        action = Action(
            kind=kind,
            code=code,
            display_name=str(row.get("display_name", "")),
            detail={str(k): str(v) for k, v in dict(detail).items()},
        )
        events.setdefault(key, {}).setdefault(timestamp, []).append(
            Event(action, outcome)
        )

    skipped_no_static = 0
    episodes: list[Episode] = []
    for key in sorted(events):
        record = statics.get(key)
        if record is None:
            skipped_no_static += 1
            continue
        timeline = tuple(
            EventSet(timestamp=ts, events=tuple(rows))
            for ts, rows in sorted(events[key].items())
        )
        last_days = timeline[-1].timestamp / 1440.0 if timeline else 0.0
        profile = StaticProfile(
            age=int(record.get("age", 0)),
            gender=str(record.get("gender", "")),
            allergies=str(record.get("allergies", "")),
            chief_complaint=str(record.get("chief_complaint", "")),
            history_summary=str(record.get("history_summary", "")),
        )
        diagnostics = DiagnosticProfile(
            primary=DiagnosisEntry(
                content=str(record.get("primary_diagnosis", "unknown")),
                reason=str(record.get("primary_reason", "")),
            ),
            secondary=tuple(
                DiagnosisEntry(content=str(s.get("content", "")), reason=str(s.get("reason", "")))
                for s in record.get("secondary_diagnoses", ())
            ),
        )
        episodes.append(
            Episode(
                subject_id=key[0],
                admission_id=key[1],
                profile=profile,
                diagnostics=diagnostics,
                timeline=timeline,
                length_of_stay=float(record.get("length_of_stay", math.ceil(last_days * 100) / 100)),
            )
        )
    if dropped_malformed or dropped_duplicate or dropped_unexecuted or skipped_no_static:
        log.info(
            "assembly dropped %d malformed, %d duplicate, %d unexecuted rows; "
            "skipped %d admissions without a static record",
            dropped_malformed,
            dropped_duplicate,
            dropped_unexecuted,
            skipped_no_static,
        )
    yield from episodes


# --- corpus statistics -------------------------------------------------------------


def episode_metrics(episode: Episode) -> dict[str, float]:
    total = sum(len(s.events) for s in episode.timeline)
    inquiries = sum(
        1
        for s in episode.timeline
        for e in s.events
        if e.action.kind is ActionKind.INQUIRY
    )
    los = episode.length_of_stay
    return {
        "los_days": los,
        "total_events": float(total),
        "inquiry_events": float(inquiries),
        "intervention_events": float(total - inquiries),
        "event_intensity": total / max(los, MIN_LOS_DAYS),
    }


def nearest_rank_percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p*N)-th smallest value (1-based)."""
    if not values:
        raise EmptyCorpusError("percentile of an empty value list")
    if not (0.0 < p <= 1.0):
        raise ConfigError(f"percentile must be in (0, 1] (got {p})")
    ordered = sorted(values)
    rank = max(1, math.ceil(p * len(ordered)))
    return ordered[rank - 1]


@dataclass(frozen=True)
class HistogramBin:
    low: float
    high: float
    count: int


@dataclass(frozen=True)
class MetricSummary:
    max: float
    mean: float
    median: float
    histogram: tuple[HistogramBin, ...]

    def to_dict(self) -> dict:
        return {
            "max": self.max,
            "mean": self.mean,
            "median": self.median,
            "histogram": [
                {"low": b.low, "high": b.high, "count": b.count}
                for b in self.histogram
            ],
        }


def _histogram(values: Sequence[float], bins: int = HISTOGRAM_BINS) -> tuple[HistogramBin, ...]:
    lo, hi = min(values), max(values)
    if lo == hi:
        return (HistogramBin(lo, hi, len(values)),)
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in values:
        index = min(int((v - lo) / width), bins - 1)
        counts[index] += 1
    return tuple(
        HistogramBin(lo + i * width, lo + (i + 1) * width, counts[i])
        for i in range(bins)
    )


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2 == 1:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


@dataclass(frozen=True)
class CorpusStats:
    n_episodes: int
    metrics: Mapping[str, MetricSummary]
    values: Mapping[str, tuple[float, ...]]  # per-metric raw values, episode order

    def percentile(self, metric: str, p: float) -> float:
        return nearest_rank_percentile(self.values[metric], p)

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "metrics": {k: v.to_dict() for k, v in sorted(self.metrics.items())},
        }


def compute_corpus_stats(corpus: Iterable[Episode]) -> CorpusStats:
    per_metric: dict[str, list[float]] = {m: [] for m in STAT_METRICS}
    count = 0
    for episode in corpus:
        count += 1
        for metric, value in episode_metrics(episode).items():
            per_metric[metric].append(value)
    if count == 0:
        raise EmptyCorpusError("stats over an empty corpus")
    summaries = {
        metric: MetricSummary(
            max=max(values),
            mean=math.fsum(values) / len(values),
            median=_median(values),
            histogram=_histogram(values),
        )
        for metric, values in per_metric.items()
    }
    return CorpusStats(
        n_episodes=count,
        metrics=summaries,
        values={m: tuple(v) for m, v in per_metric.items()},
    )


# --- filtering ---------------------------------------------------------------------

# Metrics capped at the upper percentile only; total_events additionally
# gets the lower bound (the two-sided rule).
UPPER_CAPPED_METRICS = (
    "los_days",
    "inquiry_events",
    "intervention_events",
    "event_intensity",
)


@dataclass(frozen=True)
class FilterConfig:
    upper_percentile: float = 0.90
    lower_percentile: float = 0.10
    require_medication: bool = True
    lower_bound_all_metrics: bool = False  # extend the lower bound beyond total_events

    def __post_init__(self):
        if not (0.0 <= self.lower_percentile < self.upper_percentile <= 1.0):
            raise ConfigError(
                "need 0 <= lower_percentile < upper_percentile <= 1 "
                f"(got {self.lower_percentile}, {self.upper_percentile})"
            )


@dataclass(frozen=True)
class FilterThresholds:
    upper: Mapping[str, float]  # metric -> cap (reject when value > cap)
    lower: Mapping[str, float]  # metric -> floor (reject when value < floor)
    require_medication: bool
    upper_label: str = "p90"
    lower_label: str = "p10"

    def violations(self, episode: Episode) -> list[str]:
        metrics = episode_metrics(episode)
        out: list[str] = []
        if self.require_medication and metrics["intervention_events"] == 0:
            out.append("no-medication")
        for metric in sorted(self.lower):
            if metrics[metric] < self.lower[metric]:
                out.append(f"{metric}<{self.lower_label}")
        for metric in sorted(self.upper):
            if metrics[metric] > self.upper[metric]:
                out.append(f"{metric}>{self.upper_label}")
        return out

    def to_dict(self) -> dict:
        return {
            "upper": dict(sorted(self.upper.items())),
            "lower": dict(sorted(self.lower.items())),
            "require_medication": self.require_medication,
            "upper_label": self.upper_label,
            "lower_label": self.lower_label,
        }


@dataclass(frozen=True)
class FilterReport:
    thresholds: FilterThresholds
    kept: int
    rejected: int
    rejections_by_rule: Mapping[str, int]

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.to_dict(),
            "kept": self.kept,
            "rejected": self.rejected,
            "rejections_by_rule": dict(sorted(self.rejections_by_rule.items())),
        }


def derive_thresholds(stats: CorpusStats, cfg: FilterConfig) -> FilterThresholds:
    upper = {
        metric: stats.percentile(metric, cfg.upper_percentile)
        for metric in UPPER_CAPPED_METRICS
    }
    upper["total_events"] = stats.percentile("total_events", cfg.upper_percentile)
    lower_metrics = (
        STAT_METRICS if cfg.lower_bound_all_metrics else ("total_events",)
    )
    lower = {
        metric: (
            stats.percentile(metric, cfg.lower_percentile)
            if cfg.lower_percentile > 0
            else -math.inf
        )
        for metric in lower_metrics
    }
    return FilterThresholds(
        upper=upper,
        lower=lower,
        require_medication=cfg.require_medication,
        upper_label=f"p{round(cfg.upper_percentile * 100)}",
        lower_label=f"p{round(cfg.lower_percentile * 100)}",
    )


def filter_corpus(
    corpus: Sequence[Episode], cfg: FilterConfig | None = None
) -> tuple[list[Episode], FilterReport]:
    """Two-pass percentile filter; each rejection is attributed to one rule.

    Pass one derives thresholds from the input corpus itself; pass two
    applies them. A rejected episode is counted under its first violated
    rule, so the per-rule counts sum to the rejected total.
    """
    cfg = cfg or FilterConfig()
    if not corpus:
        raise EmptyCorpusError("filter over an empty corpus")
    thresholds = derive_thresholds(compute_corpus_stats(corpus), cfg)
    kept: list[Episode] = []
    rejections: dict[str, int] = {}
    for episode in corpus:
        violated = thresholds.violations(episode)
        if violated:
            rejections[violated[0]] = rejections.get(violated[0], 0) + 1
        else:
            kept.append(episode)
    report = FilterReport(
        thresholds=thresholds,
        kept=len(kept),
        rejected=len(corpus) - len(kept),
        rejections_by_rule=rejections,
    )
    return kept, report


# --- patient-centric split -----------------------------------------------------------


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float
    seed: int = 0
    stratify: bool = True  # stratum = canonicalized primary diagnosis

    def __post_init__(self):
        if not (0.0 < self.test_fraction < 1.0):
            raise ConfigError(
                f"test_fraction must be in (0, 1) (got {self.test_fraction})"
            )


def split_by_patient(
    corpus: Sequence[Episode], cfg: SplitConfig
) -> tuple[list[Episode], list[Episode]]:
    """Assign whole patients to train or test, stratified by primary diagnosis.

    Deterministic given the seed and independent of input order: episodes
    are canonically sorted before grouping, and each stratum gets its own
    seeded shuffle. Strata with a single patient go wholly to train (test
    purity wins over hitting the exact fraction) with a warning.
    """
    ordered = sorted(corpus, key=lambda e: (e.subject_id, e.admission_id))
    by_patient: dict[str, list[Episode]] = {}
    for episode in ordered:
        by_patient.setdefault(episode.subject_id, []).append(episode)

    strata: dict[str, list[str]] = {}
    for subject_id, episodes in by_patient.items():
        if cfg.stratify:
            stratum = canonicalize_code(
                episodes[0].diagnostics.primary.content or "unknown"
            )
        else:
            stratum = "all"
        strata.setdefault(stratum, []).append(subject_id)

    test_subjects: set[str] = set()
    for stratum in sorted(strata):
        subjects = sorted(strata[stratum])
        if len(subjects) < 2:
            warnings.warn(
                f"stratum {stratum!r} has a single patient; assigned to train",
                DegenerateStratumWarning,
                stacklevel=2,
            )
            continue
        rng = PortableRng(mix(cfg.seed, _string_key(stratum)))
        rng.shuffle(subjects)
        stratum_episodes = sum(len(by_patient[s]) for s in subjects)
        target = cfg.test_fraction * stratum_episodes
        assigned = 0
        for subject in subjects:
            if assigned >= target:
                break
            test_subjects.add(subject)
            assigned += len(by_patient[subject])

    train = [e for e in ordered if e.subject_id not in test_subjects]
    test = [e for e in ordered if e.subject_id in test_subjects]
    return train, test


# --- synthetic corpus generation ------------------------------------------------------

DIAGNOSIS_POOL: tuple[tuple[str, str, str], ...] = (
    (
        "septic shock",
        "hypotension with a suspected infectious source",
        "fever and low blood pressure",
    ),
    (
        "acute kidney injury",
        "rising creatinine against a normal baseline",
        "reduced urine output",
    ),
    (
        "community acquired pneumonia",
        "focal consolidation with productive cough",
        "cough and shortness of breath",
    ),
    (
        "congestive heart failure exacerbation",
        "volume overload on top of reduced ejection fraction",
        "worsening leg swelling and dyspnea",
    ),
    (
        "diabetic ketoacidosis",
        "hyperglycemia with anion gap acidosis",
        "nausea and confusion",
    ),
    (
        "upper gastrointestinal bleed",
        "melena with a hemoglobin drop",
        "black stools and dizziness",
    ),
    (
        "atrial fibrillation with rapid ventricular response",
        "irregular tachycardia on presentation",
        "palpitations",
    ),
    (
        "cellulitis",
        "spreading erythema with systemic signs",
        "painful red skin on the lower leg",
    ),
)

ALLERGY_POOL = ("none known", "penicillin", "sulfa drugs", "latex")

# Fraction of baseline a reading may drift from baseline and still be a
# valid surge target: keeps the induced jump above +50% while the later
# relaxation back to baseline stays below a -50% consecutive change.
SURGE_ELIGIBILITY_BAND = 0.10


@dataclass(frozen=True)
class GenConfig:
    n_episodes: int
    steps_min: int = 12
    steps_max: int = 24
    interval_minutes_min: int = 180
    interval_minutes_max: int = 480
    inquiry_mode: str = "panel"  # "panel" or "random"
    inquiries_min: int = 2
    inquiries_max: int = 5
    include_labels: bool = True
    intervention_probability: float = 0.3
    interventions_max_per_step: int = 2
    hs_injection_rate: float = 0.0
    hs_exact_per_episode: int | None = None
    multi_admission_fraction: float = 0.2

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ConfigError("n_episodes must be >= 1")
        if not (1 <= self.steps_min <= self.steps_max):
            raise ConfigError("need 1 <= steps_min <= steps_max")
        if not (1 <= self.interval_minutes_min <= self.interval_minutes_max):
            raise ConfigError("need 1 <= interval_minutes_min <= interval_minutes_max")
        if self.inquiry_mode not in ("panel", "random"):
            raise ConfigError(f"unknown inquiry_mode {self.inquiry_mode!r}")
        if not (1 <= self.inquiries_min <= self.inquiries_max):
            raise ConfigError("need 1 <= inquiries_min <= inquiries_max")
        if not (0.0 <= self.intervention_probability <= 1.0):
            raise ConfigError("intervention_probability must be in [0, 1]")
        if not (0.0 <= self.hs_injection_rate <= 1.0):
            raise ConfigError("hs_injection_rate must be in [0, 1]")
        if not (0.0 <= self.multi_admission_fraction <= 1.0):
            raise ConfigError("multi_admission_fraction must be in [0, 1]")
        if self.hs_exact_per_episode is not None:
            if self.hs_exact_per_episode < 0:
                raise ConfigError("hs_exact_per_episode must be >= 0")
            if self.hs_exact_per_episode > 0 and self.steps_min < 2:
                raise ConfigError("exact injections need episodes of >= 2 steps")

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "GenConfig":
        known = {f.name for f in dataclass_fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(f"bad generator config: {exc}") from exc


def _routine_interventions(oracle_cfg: OracleConfig) -> list[str]:
    return sorted(
        code for code in oracle_cfg.interventions if not code.endswith(SURGE_SUFFIX)
    )


def _exact_injection_plan(
    n_steps: int, k: int, analytes: Sequence[str], rng: PortableRng
) -> dict[int, str]:
    """Evenly spaced injection steps (indices >= 1), one analyte each.

    Guaranteeing the induced jump needs the target near baseline, so each
    analyte is surged at most once per episode.
    """
    if k == 0:
        return {}
    if k > len(analytes):
        raise ConfigError(
            f"hs_exact_per_episode={k} exceeds the {len(analytes)} declared analytes"
        )
    usable = n_steps - 1  # step 0 has no prior reading to jump from
    if k > usable:
        raise ConfigError(f"cannot place {k} injections in {usable} eligible steps")
    stride = usable / k
    steps = [1 + int(i * stride) for i in range(k)]
    pool = list(analytes)
    rng.shuffle(pool)
    return dict(zip(steps, pool[:k]))


def _surge_eligible(
    last_reading: Mapping[str, float], oracle_cfg: OracleConfig, code: str
) -> bool:
    reading = last_reading.get(code)
    if reading is None:
        return False
    baseline = oracle_cfg.analytes[code].baseline
    if baseline == 0:
        return False
    return abs(reading / baseline - 1.0) < SURGE_ELIGIBILITY_BAND


def _make_profile(
    rng: PortableRng, diagnosis: tuple[str, str, str]
) -> tuple[StaticProfile, str]:
    condition, reason, complaint = diagnosis
    age = rng.randint(18, 95)
    gender = rng.choice(("female", "male"))
    allergies = rng.choice(ALLERGY_POOL)
    summary = rng.choice(
        (
            "no significant prior history",
            "hypertension managed with medication",
            "type 2 diabetes on oral agents",
            "former smoker, quit over ten years ago",
        )
    )
    profile = StaticProfile(
        age=age,
        gender=gender,
        allergies=allergies,
        chief_complaint=complaint,
        history_summary=summary,
    )
    return profile, condition


def _make_diagnostics(rng: PortableRng, primary: tuple[str, str, str]) -> DiagnosticProfile:
    condition, reason, _ = primary
    n_secondary = rng.randint(0, 2)
    others = [d for d in DIAGNOSIS_POOL if d[0] != condition]
    secondary = []
    for _ in range(n_secondary):
        pick = rng.choice(others)
        others = [d for d in others if d[0] != pick[0]]
        secondary.append(DiagnosisEntry(content=pick[0], reason=pick[1]))
        if not others:
            break
    return DiagnosticProfile(
        primary=DiagnosisEntry(content=condition, reason=reason),
        secondary=tuple(secondary),
    )


def _generate_episode(
    oracle_cfg: OracleConfig,
    gen_cfg: GenConfig,
    seed: int,
    index: int,
    subject_id: str,
    admission_id: str,
    profile: StaticProfile,
    diagnostics: DiagnosticProfile,
) -> Episode:
    rng = PortableRng(mix(seed, index, 0xEC0))
    session_seed = derive_episode_seed(seed, index)
    analytes = sorted(oracle_cfg.analytes)
    label_codes = sorted(oracle_cfg.label_rules)
    routine = _routine_interventions(oracle_cfg)

    n_steps = rng.randint(gen_cfg.steps_min, gen_cfg.steps_max)
    exact_plan = (
        _exact_injection_plan(n_steps, gen_cfg.hs_exact_per_episode, analytes, rng)
        if gen_cfg.hs_exact_per_episode is not None
        else None
    )

    history: tuple[EventSet, ...] = ()
    last_reading: dict[str, float] = {}
    now = 0
    for step in range(n_steps):
        now += rng.randint(gen_cfg.interval_minutes_min, gen_cfg.interval_minutes_max)
        actions: list[Action] = []

        if gen_cfg.inquiry_mode == "panel":
            inquiry_codes = list(analytes)
            if gen_cfg.include_labels:
                inquiry_codes += label_codes
        else:
            count = rng.randint(
                min(gen_cfg.inquiries_min, len(analytes)),
                min(gen_cfg.inquiries_max, len(analytes)),
            )
            pool = list(analytes)
            rng.shuffle(pool)
            inquiry_codes = sorted(pool[:count])
            if gen_cfg.include_labels and label_codes and rng.random() < 0.5:
                inquiry_codes.append(rng.choice(label_codes))

        surge_target: str | None = None
        if exact_plan is not None:
            surge_target = exact_plan.get(step)
        elif (
            gen_cfg.hs_injection_rate > 0
            and step >= 1
            and rng.random() < gen_cfg.hs_injection_rate
        ):
            candidates = [
                code
                for code in analytes
                if _surge_eligible(last_reading, oracle_cfg, code)
            ]
            if candidates:
                surge_target = rng.choice(candidates)

        if surge_target is not None:
            actions.append(Action(ActionKind.INTERVENTION, surge_target + SURGE_SUFFIX))
            if surge_target not in inquiry_codes:
                inquiry_codes.append(surge_target)

        if routine and rng.random() < gen_cfg.intervention_probability:
            count = rng.randint(1, gen_cfg.interventions_max_per_step)
            pool = list(routine)
            rng.shuffle(pool)
            for code in pool[:count]:
                actions.append(Action(ActionKind.INTERVENTION, code))

        actions.extend(Action(ActionKind.INQUIRY, code) for code in inquiry_codes)
        # Canonical order now so recorded noise indices match a later rollout
        # over the (canonically sorted) event sets.
        actions.sort(key=Action.identity)

        state = PatientState(
            now=now, profile=profile, diagnostics=diagnostics, history=history
        )
        outcomes = oracle_predict(oracle_cfg, state, actions, session_seed)
        event_set = EventSet(
            timestamp=now,
            events=tuple(Event(a, o) for a, o in zip(actions, outcomes)),
        )
        history = history + (event_set,)
        for event in event_set.events:
            if isinstance(event.outcome, NumericOutcome):
                last_reading[event.action.code] = event.outcome.value

    length_of_stay = round(now / 1440.0 + rng.uniform(0.05, 0.5), 2)
    return Episode(
        subject_id=subject_id,
        admission_id=admission_id,
        profile=profile,
        diagnostics=diagnostics,
        timeline=history,
        length_of_stay=length_of_stay,
    )


def generate_synthetic_corpus(
    oracle_cfg: OracleConfig, gen_cfg: GenConfig, seed: int
) -> list[Episode]:
    """Drive the oracle over sampled action schedules; pure function of inputs.

    Per-episode noise substreams are derived from (seed, episode index), the
    same derivation batch rollouts use, so a rollout of episode i with the
    generating oracle and base seed reproduces its outcomes bit-for-bit.

    Injected surges ("hs" settings) create >50% consecutive jumps in ground
    truth. Exact per-episode counts are guaranteed when the corpus is
    generated with noise_sigma=0, panel inquiries, and no routine
    interventions; the config is validated against those conditions.
    """
    if gen_cfg.hs_exact_per_episode is not None and gen_cfg.hs_exact_per_episode > 0:
        problems = []
        if oracle_cfg.noise_sigma != 0:
            problems.append("noise_sigma must be 0")
        if gen_cfg.inquiry_mode != "panel":
            problems.append("inquiry_mode must be 'panel'")
        if gen_cfg.intervention_probability != 0:
            problems.append("intervention_probability must be 0")
        if problems:
            raise ConfigError(
                "exact surge injection requires: " + "; ".join(problems)
            )

    id_rng = PortableRng(mix(seed, 0x1D5))
    episodes: list[Episode] = []
    patient_serial = 0
    admission_serial = 0
    remaining_for_patient = 0
    profile: StaticProfile | None = None
    diagnostics: DiagnosticProfile | None = None
    subject_id = ""
    for index in range(gen_cfg.n_episodes):
        if remaining_for_patient == 0:
            patient_serial += 1
            subject_id = f"p{patient_serial:05d}"
            remaining_for_patient = (
                2 if id_rng.random() < gen_cfg.multi_admission_fraction else 1
            )
            diagnosis = id_rng.choice(DIAGNOSIS_POOL)
            profile, _ = _make_profile(id_rng, diagnosis)
            diagnostics = _make_diagnostics(id_rng, diagnosis)
        remaining_for_patient -= 1
        admission_serial += 1
        episodes.append(
            _generate_episode(
                oracle_cfg,
                gen_cfg,
                seed,
                index,
                subject_id,
                f"a{admission_serial:06d}",
                profile,
                diagnostics,
            )
        )
    return episodes


# --- static extraction ----------------------------------------------------------------

EXTRACTION_REQUIRED_KEYS = (
    "Basic Information",
    "History Information",
    "Diagnosis Results",
)

_AGE_PATTERN = re.compile(r"(?:age[^0-9]{0,10})?(\d{1,3})\s*(?:year|yo|y/o|F|M|\b)", re.IGNORECASE)

_FIELD_PATTERNS = {
    "age": re.compile(r"age\s*[:=]?\s*(\d{1,3})", re.IGNORECASE),
    "gender": re.compile(r"(?:gender|sex)\s*[:=]\s*([^;,.\n]+)", re.IGNORECASE),
    "allergies": re.compile(r"allerg\w*\s*(?:history)?\s*[:=]\s*([^;.\n]+)", re.IGNORECASE),
    "chief_complaint": re.compile(r"chief complaint\s*[:=]\s*([^;.\n]+)", re.IGNORECASE),
}


def _stringify(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, Mapping):
        return "; ".join(f"{k}: {_stringify(v)}" for k, v in value.items())
    if isinstance(value, (list, tuple)):
        return "; ".join(_stringify(v) for v in value)
    return str(value)


def _parse_basic_information(value: Any) -> StaticProfile:
    age = 0
    gender = ""
    allergies = ""
    chief_complaint = ""
    if isinstance(value, Mapping):
        lookup = {str(k).casefold(): v for k, v in value.items()}
        raw_age = lookup.get("age")
        if raw_age is not None:
            match = re.search(r"\d{1,3}", str(raw_age))
            if match:
                age = int(match.group())
        gender = _stringify(lookup.get("gender", lookup.get("sex", "")))
        allergies = _stringify(lookup.get("allergy history", lookup.get("allergies", "")))
        chief_complaint = _stringify(lookup.get("chief complaint", ""))
    else:
        text = _stringify(value)
        age_match = _FIELD_PATTERNS["age"].search(text) or _AGE_PATTERN.search(text)
        if age_match:
            age = int(age_match.group(1))
        for field_name, pattern in _FIELD_PATTERNS.items():
            if field_name == "age":
                continue
            match = pattern.search(text)
            if match:
                captured = match.group(1).strip()
                if field_name == "gender":
                    gender = captured
                elif field_name == "allergies":
                    allergies = captured
                else:
                    chief_complaint = captured
    if not (0 <= age <= 130):
        age = 0
    return StaticProfile(
        age=age,
        gender=gender,
        allergies=allergies,
        chief_complaint=chief_complaint,
        history_summary="",
    )


def _parse_diagnosis_results(value: Any) -> DiagnosticProfile:
    if not isinstance(value, Mapping):
        raise SchemaViolationError(missing=["Diagnosis Results (object)"])
    if "Primary Diagnosis" not in value:
        raise SchemaViolationError(missing=["Diagnosis Results.Primary Diagnosis"])
    primary_raw = value["Primary Diagnosis"]
    if isinstance(primary_raw, Mapping):
        primary = DiagnosisEntry(
            content=_stringify(primary_raw.get("Content", "")),
            reason=_stringify(primary_raw.get("Reason", "")),
        )
    else:
        primary = DiagnosisEntry(content=_stringify(primary_raw))
    if not primary.content:
        raise SchemaViolationError(
            missing=["Diagnosis Results.Primary Diagnosis.Content"]
        )
    secondary: list[DiagnosisEntry] = []
    for entry in value.get("Secondary Diagnoses", ()) or ():
        if isinstance(entry, Mapping):
            secondary.append(
                DiagnosisEntry(
                    content=_stringify(entry.get("Content", "")),
                    reason=_stringify(entry.get("Reason", "")),
                )
            )
        else:
            secondary.append(DiagnosisEntry(content=_stringify(entry)))
    return DiagnosticProfile(primary=primary, secondary=tuple(secondary))


def parse_extraction_reply(reply: str) -> tuple[StaticProfile, DiagnosticProfile]:
    """Validate and map an extraction reply; every field traces to the reply."""
    block = first_json_block(reply)
    if not isinstance(block, Mapping):
        raise SchemaViolationError(missing=list(EXTRACTION_REQUIRED_KEYS))
    missing = [key for key in EXTRACTION_REQUIRED_KEYS if key not in block]
    if missing:
        raise SchemaViolationError(missing=missing)
    profile = _parse_basic_information(block["Basic Information"])
    profile = StaticProfile(
        age=profile.age,
        gender=profile.gender,
        allergies=profile.allergies,
        chief_complaint=profile.chief_complaint,
        history_summary=_stringify(block["History Information"]),
    )
    return profile, _parse_diagnosis_results(block["Diagnosis Results"])


def extraction_template() -> str:
    from importlib import resources

    return (
        resources.files("trajsim")
        .joinpath("templates/extraction_prompt.txt")
        .read_text(encoding="utf-8")
    )


def extract_static_profile(
    note: str, backend: RemoteModel
) -> tuple[StaticProfile, DiagnosticProfile]:
    """Send the extraction prompt with the note appended; map the reply."""
    prompt = extraction_template() + "\n\n# Discharge Record\n" + note
    reply = backend.complete(prompt)
    return parse_extraction_reply(reply)
