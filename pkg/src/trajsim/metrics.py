"""Trajectory evaluation metrics.

Covers relative-error success rates (S@X), SMAPE, status F1 against
reference ranges, label-set precision/recall/F1, the aggregate average
score, retention rate between paired rollout regimes, high-sensitivity
subset analysis, and error-band bucketing.

Conventions, fixed here so downstream reports are comparable:
  - relative error with y = 0: both-zero counts as 0, otherwise the pair is
    excluded from S@X denominators and counted separately
  - S@X thresholds are inclusive (E <= X/100)
  - SMAPE is a fraction in [0, 2]; the denominator carries a 1e-10 guard
  - range boundaries are normal; abnormal is the positive class
  - high-sensitivity membership requires a strict >50% consecutive change
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .domain import (
    ActionKind,
    Episode,
    LabelOutcome,
    NumericOutcome,
    canonicalize_code,
)
from .errors import (
    AlignmentError,
    ConfigError,
    EmptyInputError,
    NoRangedPairsError,
)

SMAPE_EPSILON = 1e-10

HIGH_SENSITIVITY_MIN_CHANGE = 0.5

S_AT_THRESHOLDS = (10, 15, 25)


@dataclass(frozen=True)
class NumericPair:
    """One aligned numeric observation: ground truth y vs prediction y_hat."""

    code: str
    y: float
    y_hat: float
    step_index: int = 0
    timestamp: int = 0


@dataclass(frozen=True)
class LabelPair:
    code: str
    truth: frozenset[str]
    pred: frozenset[str]
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "truth", frozenset(self.truth))
        object.__setattr__(self, "pred", frozenset(self.pred))


@dataclass(frozen=True)
class ReferenceRange:
    low: float
    high: float
    unit: str = ""

    def __post_init__(self):
        if not (self.low < self.high):
            raise ConfigError(
                f"reference range low must be < high (got [{self.low}, {self.high}])"
            )

    def is_abnormal(self, value: float) -> bool:
        # Boundary values count as normal.
        return value < self.low or value > self.high


@dataclass(frozen=True)
class ReferenceRangeTable:
    ranges: Mapping[str, ReferenceRange] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self,
            "ranges",
            {canonicalize_code(k): v for k, v in dict(self.ranges).items()},
        )

    def get(self, code: str) -> ReferenceRange | None:
        return self.ranges.get(code)

    def __contains__(self, code: str) -> bool:
        return code in self.ranges

    def __len__(self) -> int:
        return len(self.ranges)

    def to_dict(self) -> dict:
        return {
            code: {"low": r.low, "high": r.high, "unit": r.unit}
            for code, r in sorted(self.ranges.items())
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ReferenceRangeTable":
        ranges = {}
        for code, entry in payload.items():
            ranges[code] = ReferenceRange(
                low=float(entry["low"]),
                high=float(entry["high"]),
                unit=entry.get("unit", ""),
            )
        return cls(ranges)


def load_reference_ranges(path: str | os.PathLike) -> ReferenceRangeTable:
    """Load a JSON table mapping analyte code to {low, high, unit}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected an object mapping code to range")
    try:
        return ReferenceRangeTable.from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad range entry: {exc}") from exc


# --- scalar metrics -----------------------------------------------------------


def relative_error(y: float, y_hat: float) -> float | None:
    """|y - y_hat| / |y|; None marks the undefined y=0, y_hat!=0 case."""
    if y == 0.0:
        return 0.0 if y_hat == 0.0 else None
    return abs(y - y_hat) / abs(y)


def success_at(pairs: Sequence[NumericPair], x: float) -> float:
    """Fraction of defined-error pairs with relative error <= x percent."""
    errors = [
        e for e in (relative_error(p.y, p.y_hat) for p in pairs) if e is not None
    ]
    if not errors:
        raise EmptyInputError("success_at: no pairs with a defined relative error")
    threshold = x / 100.0
    return sum(1 for e in errors if e <= threshold) / len(errors)


def smape(pairs: Sequence[NumericPair]) -> float:
    """Symmetric mean absolute percentage error, as a fraction in [0, 2]."""
    if not pairs:
        raise EmptyInputError("smape: empty pair list")
    total = math.fsum(
        2.0 * abs(p.y - p.y_hat) / (abs(p.y) + abs(p.y_hat) + SMAPE_EPSILON)
        for p in pairs
    )
    return total / len(pairs)


def bucket_errors(pairs: Sequence[NumericPair]) -> dict[str, int]:
    """Partition defined relative errors into precise/acceptable/deviation bands."""
    buckets = {"precise": 0, "acceptable": 0, "deviation": 0}
    for pair in pairs:
        e = relative_error(pair.y, pair.y_hat)
        if e is None:
            continue
        if e <= 0.10:
            buckets["precise"] += 1
        elif e <= 0.20:
            buckets["acceptable"] += 1
        else:
            buckets["deviation"] += 1
    return buckets


# --- classification metrics ----------------------------------------------------


@dataclass(frozen=True)
class StatReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    n_used: int
    n_unranged: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "n_used": self.n_used,
            "n_unranged": self.n_unranged,
        }


@dataclass(frozen=True)
class LabelReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    n_pairs: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "n_pairs": self.n_pairs,
        }


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if (precision + recall) > 0
        else 0.0
    )
    return precision, recall, f1


def stat_f1(pairs: Sequence[NumericPair], ranges: ReferenceRangeTable) -> StatReport:
    """Binary normal/abnormal classification F1; abnormal is positive.

    Pairs whose code has no range entry are excluded and counted.
    """
    tp = fp = fn = tn = 0
    used = 0
    unranged = 0
    for pair in pairs:
        rng = ranges.get(pair.code)
        if rng is None:
            unranged += 1
            continue
        used += 1
        truth_abn = rng.is_abnormal(pair.y)
        pred_abn = rng.is_abnormal(pair.y_hat)
        if truth_abn and pred_abn:
            tp += 1
        elif not truth_abn and pred_abn:
            fp += 1
        elif truth_abn and not pred_abn:
            fn += 1
        else:
            tn += 1
    if used == 0:
        raise NoRangedPairsError(
            f"stat_f1: no pair has a reference range ({unranged} unranged)"
        )
    precision, recall, f1 = _prf(tp, fp, fn)
    return StatReport(precision, recall, f1, tp, fp, fn, tn, used, unranged)


def label_prf(pairs: Sequence[LabelPair]) -> LabelReport:
    """Micro-averaged set precision/recall/F1 over all label pairs."""
    if not pairs:
        raise EmptyInputError("label_prf: empty pair list")
    tp = fp = fn = 0
    for pair in pairs:
        tp += len(pair.truth & pair.pred)
        fp += len(pair.pred - pair.truth)
        fn += len(pair.truth - pair.pred)
    precision, recall, f1 = _prf(tp, fp, fn)
    return LabelReport(precision, recall, f1, tp, fp, fn, len(pairs))


def avg_score(s25: float, stat: float, label: float) -> float:
    return (s25 + stat + label) / 3.0


# --- high-sensitivity subset -----------------------------------------------------


@dataclass(frozen=True)
class HighSensitivitySubset:
    """Timeline positions whose ground truth jumped >50% vs the prior value.

    Membership is (analyte code, timeline step index) of the later value.
    Consecutive pairs with a zero previous value cannot be scored and are
    tallied in skipped_zero_prev.
    """

    pairs: frozenset[tuple[str, int]] = frozenset()
    skipped_zero_prev: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pairs", frozenset(self.pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, item: tuple[str, int]) -> bool:
        return item in self.pairs

    def __iter__(self):
        return iter(self.pairs)


def high_sensitivity_subset(
    truth: Episode, min_change: float = HIGH_SENSITIVITY_MIN_CHANGE
) -> HighSensitivitySubset:
    """Find per-analyte consecutive ground-truth changes strictly above min_change."""
    last_value: dict[str, float] = {}
    members: set[tuple[str, int]] = set()
    skipped = 0
    for step_index, event_set in enumerate(truth.timeline):
        for event in event_set.events:
            if event.action.kind is not ActionKind.INQUIRY:
                continue
            if not isinstance(event.outcome, NumericOutcome):
                continue
            code = event.action.code
            value = event.outcome.value
            prev = last_value.get(code)
            if prev is not None:
                if prev == 0.0:
                    skipped += 1
                elif abs((value - prev) / prev) > min_change:
                    members.add((code, step_index))
            last_value[code] = value
    return HighSensitivitySubset(frozenset(members), skipped)


# --- aligned pair extraction ------------------------------------------------------


@dataclass(frozen=True)
class ExtractedPairs:
    numeric: tuple[NumericPair, ...]
    labels: tuple[LabelPair, ...]
    n_variant_mismatch: int


def _episode_of(pred: Any) -> Episode:
    # Accepts either a rollout result (carrying .predicted) or a bare episode,
    # keeping this module independent of the engine's types.
    inner = getattr(pred, "predicted", pred)
    if not isinstance(inner, Episode):
        raise TypeError(f"expected an Episode or rollout result, got {type(pred)!r}")
    return inner


def extract_pairs(pred: Any, truth: Episode) -> ExtractedPairs:
    """Align prediction with truth position by position and collect pairs.

    Raises AlignmentError unless both timelines agree on length, timestamps,
    and action identity at every position.
    """
    predicted = _episode_of(pred)
    if len(predicted.timeline) != len(truth.timeline):
        raise AlignmentError(
            f"timeline length mismatch: predicted {len(predicted.timeline)} "
            f"vs truth {len(truth.timeline)}"
        )
    numeric: list[NumericPair] = []
    labels: list[LabelPair] = []
    mismatches = 0
    for step_index, (pred_set, truth_set) in enumerate(
        zip(predicted.timeline, truth.timeline)
    ):
        if pred_set.timestamp != truth_set.timestamp:
            raise AlignmentError(
                f"step {step_index}: timestamp {pred_set.timestamp} "
                f"vs {truth_set.timestamp}"
            )
        if len(pred_set.events) != len(truth_set.events):
            raise AlignmentError(f"step {step_index}: event count differs")
        for pred_event, truth_event in zip(pred_set.events, truth_set.events):
            if pred_event.action.identity() != truth_event.action.identity():
                raise AlignmentError(
                    f"step {step_index}: action {pred_event.action.code!r} "
                    f"vs {truth_event.action.code!r}"
                )
            t_out, p_out = truth_event.outcome, pred_event.outcome
            if isinstance(t_out, NumericOutcome):
                if isinstance(p_out, NumericOutcome):
                    numeric.append(
                        NumericPair(
                            code=truth_event.action.code,
                            y=t_out.value,
                            y_hat=p_out.value,
                            step_index=step_index,
                            timestamp=truth_set.timestamp,
                        )
                    )
                else:
                    mismatches += 1
            elif isinstance(t_out, LabelOutcome):
                if isinstance(p_out, LabelOutcome):
                    labels.append(
                        LabelPair(
                            code=truth_event.action.code,
                            truth=t_out.values,
                            pred=p_out.values,
                            step_index=step_index,
                        )
                    )
                else:
                    mismatches += 1
    return ExtractedPairs(tuple(numeric), tuple(labels), mismatches)


# --- composite report ----------------------------------------------------------


@dataclass(frozen=True)
class HighSensitivityReport:
    s_at_25: float
    smape: float
    n: int

    def to_dict(self) -> dict:
        return {"s_at_25": self.s_at_25, "smape": self.smape, "n": self.n}


@dataclass(frozen=True)
class MetricsReport:
    s_at: Mapping[int, float]
    smape: float | None
    stat: StatReport | None
    label: LabelReport | None
    avg_score: float | None
    n_numeric: int
    n_label: int
    n_undefined_rel_error: int
    n_variant_mismatch: int
    high_sensitivity: HighSensitivityReport | None = None

    def __post_init__(self):
        object.__setattr__(self, "s_at", dict(self.s_at))

    @property
    def stat_f1(self) -> float | None:
        return self.stat.f1 if self.stat is not None else None

    @property
    def label_f1(self) -> float | None:
        return self.label.f1 if self.label is not None else None

    def to_dict(self) -> dict:
        return {
            "s_at": {str(k): v for k, v in sorted(self.s_at.items())},
            "smape": self.smape,
            "stat": self.stat.to_dict() if self.stat else None,
            "label": self.label.to_dict() if self.label else None,
            "avg_score": self.avg_score,
            "n_numeric": self.n_numeric,
            "n_label": self.n_label,
            "n_undefined_rel_error": self.n_undefined_rel_error,
            "n_variant_mismatch": self.n_variant_mismatch,
            "high_sensitivity": (
                self.high_sensitivity.to_dict() if self.high_sensitivity else None
            ),
        }


def _report_from_pairs(
    numeric: Sequence[NumericPair],
    labels: Sequence[LabelPair],
    ranges: ReferenceRangeTable,
    hs_subset: HighSensitivitySubset | None,
    n_variant_mismatch: int,
) -> MetricsReport:
    defined = [
        p for p in numeric if relative_error(p.y, p.y_hat) is not None
    ]
    n_undefined = len(numeric) - len(defined)

    s_at: dict[int, float] = {}
    smape_value: float | None = None
    if defined:
        for threshold in S_AT_THRESHOLDS:
            s_at[threshold] = success_at(numeric, threshold)
    if numeric:
        smape_value = smape(numeric)

    stat_report: StatReport | None = None
    if numeric:
        try:
            stat_report = stat_f1(numeric, ranges)
        except NoRangedPairsError:
            stat_report = None

    label_report: LabelReport | None = None
    if labels:
        label_report = label_prf(labels)

    components = [
        value
        for value in (
            s_at.get(25),
            stat_report.f1 if stat_report else None,
            label_report.f1 if label_report else None,
        )
        if value is not None
    ]
    score = math.fsum(components) / len(components) if components else None

    hs_report: HighSensitivityReport | None = None
    if hs_subset is not None and len(hs_subset) > 0:
        hs_pairs = [p for p in numeric if (p.code, p.step_index) in hs_subset]
        if hs_pairs:
            hs_defined = [
                p for p in hs_pairs if relative_error(p.y, p.y_hat) is not None
            ]
            hs_s25 = success_at(hs_pairs, 25) if hs_defined else 0.0
            hs_report = HighSensitivityReport(
                s_at_25=hs_s25, smape=smape(hs_pairs), n=len(hs_pairs)
            )

    return MetricsReport(
        s_at=s_at,
        smape=smape_value,
        stat=stat_report,
        label=label_report,
        avg_score=score,
        n_numeric=len(numeric),
        n_label=len(labels),
        n_undefined_rel_error=n_undefined,
        n_variant_mismatch=n_variant_mismatch,
        high_sensitivity=hs_report,
    )


def evaluate(pred: Any, truth: Episode, ranges: ReferenceRangeTable) -> MetricsReport:
    """Score one predicted trajectory against its ground-truth episode."""
    extracted = extract_pairs(pred, truth)
    return _report_from_pairs(
        extracted.numeric,
        extracted.labels,
        ranges,
        high_sensitivity_subset(truth),
        extracted.n_variant_mismatch,
    )


def evaluate_batch(
    runs: Iterable[tuple[Any, Episode]], ranges: ReferenceRangeTable
) -> tuple[list[MetricsReport], MetricsReport]:
    """Score many (prediction, truth) runs; returns per-run reports + aggregate.

    The aggregate pools pairs across runs (micro aggregation), so runs with
    more observations weigh proportionally more.
    """
    per_run: list[MetricsReport] = []
    all_numeric: list[NumericPair] = []
    all_labels: list[LabelPair] = []
    hs_members: set[tuple[str, int]] = set()
    hs_skipped = 0
    mismatches = 0
    offset = 0
    for pred, truth in runs:
        extracted = extract_pairs(pred, truth)
        subset = high_sensitivity_subset(truth)
        per_run.append(
            _report_from_pairs(
                extracted.numeric,
                extracted.labels,
                ranges,
                subset,
                extracted.n_variant_mismatch,
            )
        )
        # Step indices are shifted per run so pooled high-sensitivity
        # membership stays unambiguous across episodes.
        for pair in extracted.numeric:
            all_numeric.append(
                NumericPair(
                    code=pair.code,
                    y=pair.y,
                    y_hat=pair.y_hat,
                    step_index=pair.step_index + offset,
                    timestamp=pair.timestamp,
                )
            )
        for pair in extracted.labels:
            all_labels.append(
                LabelPair(
                    code=pair.code,
                    truth=pair.truth,
                    pred=pair.pred,
                    step_index=pair.step_index + offset,
                )
            )
        hs_members.update((code, step + offset) for code, step in subset)
        hs_skipped += subset.skipped_zero_prev
        mismatches += extracted.n_variant_mismatch
        offset += len(truth.timeline)
    if not per_run:
        raise EmptyInputError("evaluate_batch: no runs")
    aggregate = _report_from_pairs(
        all_numeric,
        all_labels,
        ranges,
        HighSensitivitySubset(frozenset(hs_members), hs_skipped),
        mismatches,
    )
    return per_run, aggregate


# --- retention -----------------------------------------------------------------


@dataclass(frozen=True)
class RetentionEntry:
    next_value: float
    full_value: float
    retention_pct: float | None  # None when next_value is 0

    def to_dict(self) -> dict:
        return {
            "next": self.next_value,
            "full": self.full_value,
            "retention_pct": self.retention_pct,
        }


@dataclass(frozen=True)
class RetentionReport:
    entries: Mapping[str, RetentionEntry]

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))

    def to_dict(self) -> dict:
        return {name: entry.to_dict() for name, entry in sorted(self.entries.items())}


def retention_pct(next_value: float, full_value: float) -> float | None:
    """100 * full / next; None flags the undefined next=0 case."""
    if next_value == 0.0:
        return None
    return 100.0 * full_value / next_value


def retention(next_report: MetricsReport, full_report: MetricsReport) -> RetentionReport:
    """Per-metric retention of full-trajectory scores against next-step scores."""
    candidates: dict[str, tuple[float | None, float | None]] = {
        "s25": (next_report.s_at.get(25), full_report.s_at.get(25)),
        "stat_f1": (next_report.stat_f1, full_report.stat_f1),
        "label_f1": (next_report.label_f1, full_report.label_f1),
        "overall": (next_report.avg_score, full_report.avg_score),
    }
    entries: dict[str, RetentionEntry] = {}
    for name, (next_value, full_value) in candidates.items():
        if next_value is None or full_value is None:
            continue
        entries[name] = RetentionEntry(
            next_value=next_value,
            full_value=full_value,
            retention_pct=retention_pct(next_value, full_value),
        )
    return RetentionReport(entries)
