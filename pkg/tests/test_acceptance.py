"""Acceptance gate: one test per shipped guarantee, each with a timing budget.

Run with `pytest tests/test_acceptance.py -v` to get one pass/fail line per
guarantee. Each test states its claim, checks it end to end against
independent references or pinned values, and enforces its wall-clock budget.
"""

import hashlib
import json
import math
import random
import time

import httpx
import pytest

from trajsim.backends import build_backend
from trajsim.backends.oracle import (
    AnchoredOracleModel,
    OracleModel,
    default_oracle_config,
    default_reference_ranges,
)
from trajsim.backends.remote import RemoteConfig, RemoteModel, parse_model_reply
from trajsim.cli import EXIT_OK, main
from trajsim.domain import (
    Action,
    ActionKind,
    DiagnosisEntry,
    DiagnosticProfile,
    EmptyOutcome,
    Episode,
    Event,
    EventSet,
    NumericOutcome,
    PatientState,
    StaticProfile,
)
from trajsim.engine import RolloutMode, derive_episode_seed, rollout
from trajsim.errors import (
    CountMismatchError,
    ExhaustedRetriesError,
    TypeMismatchError,
)
from trajsim.metrics import (
    LabelPair,
    NumericPair,
    ReferenceRangeTable,
    avg_score,
    bucket_errors,
    evaluate_batch,
    extract_pairs,
    high_sensitivity_subset,
    label_prf,
    retention,
    retention_pct,
    smape,
    stat_f1,
    success_at,
)
from trajsim.pipeline import (
    FilterConfig,
    GenConfig,
    SplitConfig,
    filter_corpus,
    generate_synthetic_corpus,
    nearest_rank_percentile,
    split_by_patient,
)

pytestmark = pytest.mark.filterwarnings(
    "ignore::trajsim.errors.DegenerateStratumWarning"
)

RANGES = ReferenceRangeTable.from_dict(default_reference_ranges())


class Budget:
    """Context manager asserting the wrapped block stays under a wall-clock cap."""

    def __init__(self, seconds: float, label: str):
        self.seconds = seconds
        self.label = label

    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, exc_type, *rest):
        self.elapsed = time.monotonic() - self.start
        if exc_type is None:
            assert self.elapsed < self.seconds, (
                f"{self.label} took {self.elapsed:.1f}s "
                f"(budget {self.seconds:.0f}s)"
            )


def full_and_next(corpus, model, seed):
    full, nxt = [], []
    for index, episode in enumerate(corpus):
        episode_seed = derive_episode_seed(seed, index)
        full.append(rollout(episode, model, RolloutMode.FULL_TRAJECTORY, episode_seed).predicted)
        nxt.append(rollout(episode, model, RolloutMode.NEXT_STEP, episode_seed).predicted)
    return full, nxt


# --- 1. noise-free self-consistency over a full-size corpus ----------------------------


def test_acceptance_noise_free_self_consistency_is_exact():
    """579 episodes, sigma=0: replaying the generating oracle scores 1.0 on
    every metric in both regimes, SMAPE at floating-point zero, retention 100%."""
    with Budget(60, "self-consistency corpus") as budget:
        oracle_cfg = default_oracle_config(noise_sigma=0.0, seed=424)
        corpus = generate_synthetic_corpus(
            oracle_cfg,
            GenConfig(n_episodes=579, hs_injection_rate=0.15),
            seed=579,
        )
        assert len(corpus) == 579
        model = OracleModel(oracle_cfg)
        full, nxt = full_and_next(corpus, model, seed=579)

        _, full_agg = evaluate_batch(list(zip(full, corpus)), RANGES)
        _, next_agg = evaluate_batch(list(zip(nxt, corpus)), RANGES)

        for name, agg in (("full", full_agg), ("next", next_agg)):
            assert agg.s_at[25] == 1.0, name
            assert agg.smape is not None and agg.smape <= 1e-12, name
            assert agg.stat_f1 == 1.0, name
            assert agg.label_f1 == 1.0, name
            assert agg.avg_score == 1.0, name
            assert agg.n_variant_mismatch == 0, name
            assert agg.n_numeric > 10_000, name

        kept = retention(next_agg, full_agg)
        for entry in kept.entries.values():
            assert entry.retention_pct == pytest.approx(100.0, abs=1e-9)
    print(
        f"self-consistency: {full_agg.n_numeric} numeric pairs, "
        f"avg={full_agg.avg_score}, smape={full_agg.smape}, {budget.elapsed:.1f}s"
    )


# --- 2. scoring functions against independent references -------------------------------


def ref_rel_err(y, yh):
    if y == 0:
        return 0.0 if yh == 0 else None
    return abs(y - yh) / abs(y)


def random_pairs(rng, n):
    pairs = []
    for i in range(n):
        roll = rng.random()
        if roll < 0.1:
            y = 0.0
        else:
            y = rng.uniform(-200.0, 200.0)
        if roll < 0.05:
            yh = y  # exact hit, including the 0/0 case
        elif roll < 0.15:
            yh = 0.0
        else:
            yh = y * (1 + rng.gauss(0, 0.3)) + rng.uniform(-1, 1)
        pairs.append(
            NumericPair(code="sodium", y=y, y_hat=yh, step_index=i, timestamp=i)
        )
    return pairs


def test_acceptance_metrics_match_brute_force_references():
    """1,000 randomized inputs per scoring function agree with plain
    re-implementations within 1e-9."""
    rng = random.Random(0xACCE97)
    with Budget(30, "metric reference sweep"):
        for trial in range(1000):
            pairs = random_pairs(rng, rng.randint(1, 24))
            raw = [(p.y, p.y_hat) for p in pairs]

            # success rates at several thresholds, boundary inclusive
            defined = [e for e in (ref_rel_err(y, yh) for y, yh in raw) if e is not None]
            for x in (5, 10, 25, 50):
                if defined:
                    expect = sum(1 for e in defined if e <= x / 100.0) / len(defined)
                    assert abs(success_at(pairs, x) - expect) < 1e-9

            # symmetric error
            expect_smape = sum(
                2.0 * abs(y - yh) / (abs(y) + abs(yh) + 1e-10) for y, yh in raw
            ) / len(raw)
            assert abs(smape(pairs) - expect_smape) < 1e-9

            # error bands
            bands = {"precise": 0, "acceptable": 0, "deviation": 0}
            for y, yh in raw:
                e = ref_rel_err(y, yh)
                if e is None:
                    continue
                if e <= 0.10:
                    bands["precise"] += 1
                elif e <= 0.20:
                    bands["acceptable"] += 1
                else:
                    bands["deviation"] += 1
            assert bucket_errors(pairs) == bands

            # abnormality confusion, range boundaries normal
            low, high = sorted((rng.uniform(-50, 50), rng.uniform(-50, 50)))
            table = ReferenceRangeTable.from_dict(
                {"sodium": {"low": low, "high": high, "unit": ""}}
            )
            rows = [
                (not (low <= y <= high), not (low <= yh <= high)) for y, yh in raw
            ]
            tp = sum(1 for t, p in rows if t and p)
            fp = sum(1 for t, p in rows if not t and p)
            fn = sum(1 for t, p in rows if t and not p)
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            f1 = (
                2 * precision * recall / (precision + recall)
                if precision + recall
                else 0.0
            )
            report = stat_f1(pairs, table)
            assert abs(report.precision - precision) < 1e-9
            assert abs(report.recall - recall) < 1e-9
            assert abs(report.f1 - f1) < 1e-9

        # micro label scores over randomized set pairs
        vocab = ["clear", "growth", "elevated", "trace", "left shift"]
        for trial in range(1000):
            label_pairs = []
            for i in range(rng.randint(1, 12)):
                truth = frozenset(rng.sample(vocab, rng.randint(1, 3)))
                pred = frozenset(rng.sample(vocab, rng.randint(1, 3)))
                label_pairs.append(
                    LabelPair(code="panel", truth=truth, pred=pred, step_index=i)
                )
            tp = sum(len(p.truth & p.pred) for p in label_pairs)
            fp = sum(len(p.pred - p.truth) for p in label_pairs)
            fn = sum(len(p.truth - p.pred) for p in label_pairs)
            precision = tp / (tp + fp) if tp + fp else 0.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            f1 = (
                2 * precision * recall / (precision + recall)
                if precision + recall
                else 0.0
            )
            report = label_prf(label_pairs)
            assert abs(report.precision - precision) < 1e-9
            assert abs(report.recall - recall) < 1e-9
            assert abs(report.f1 - f1) < 1e-9

        # consecutive-jump membership over randomized series
        for trial in range(1000):
            series = {}
            for code in ("a", "b"):
                points = []
                for step in range(rng.randint(2, 10)):
                    value = rng.choice([0.0, rng.uniform(0.5, 20.0)])
                    points.append(value)
                series[code] = points
            episode = _series_episode(series)
            expected = set()
            skipped = 0
            for code, points in series.items():
                for i in range(1, len(points)):
                    prev, curr = points[i - 1], points[i]
                    if prev == 0.0:
                        skipped += 1
                    elif abs((curr - prev) / prev) > 0.5:
                        expected.add((code, i))
            subset = high_sensitivity_subset(episode)
            assert set(subset.pairs) == expected
            assert subset.skipped_zero_prev == skipped
    print("metric references: 4000 randomized trials in agreement")


def _series_episode(series):
    steps = max(len(points) for points in series.values())
    timeline = []
    for step in range(steps):
        events = [
            Event(Action(ActionKind.INQUIRY, code), NumericOutcome(points[step], ""))
            for code, points in series.items()
            if step < len(points)
        ]
        timeline.append(EventSet(timestamp=(step + 1) * 60, events=tuple(events)))
    return Episode(
        subject_id="p1",
        admission_id="a1",
        profile=StaticProfile(50, "female", "", "", ""),
        diagnostics=DiagnosticProfile(DiagnosisEntry("x", ""), ()),
        timeline=tuple(timeline),
        length_of_stay=1.0,
    )


# --- 3. composite-score and retention arithmetic on pinned rows ------------------------


def test_acceptance_pinned_score_rows_reproduce():
    """The composite average and retention percentages reproduce the pinned
    reference rows at their stated precision."""
    with Budget(5, "pinned rows"):
        assert avg_score(0.716, 0.667, 0.913) == pytest.approx(0.765, abs=0.0005)
        assert avg_score(0.703, 0.649, 0.912) == pytest.approx(0.755, abs=0.0005)
        assert retention_pct(0.806, 0.716) == pytest.approx(88.8, abs=0.05)
        assert retention_pct(0.784, 0.667) == pytest.approx(85.1, abs=0.05)
        assert retention_pct(0.928, 0.913) == pytest.approx(98.4, abs=0.05)
        assert retention_pct(0.717, 0.618) == pytest.approx(86.2, abs=0.05)
    print("pinned rows: avg 0.765/0.755, retention 88.8/85.1/98.4/86.2")


# --- 4. error accumulation separates the rollout regimes -------------------------------


def per_step_smape(predicted, corpus, n_steps):
    sums = [0.0] * n_steps
    counts = [0] * n_steps
    for pred, truth in zip(predicted, corpus):
        for pair in extract_pairs(pred, truth).numeric:
            if pair.step_index < n_steps:
                sums[pair.step_index] += (
                    2.0 * abs(pair.y - pair.y_hat)
                    / (abs(pair.y) + abs(pair.y_hat) + 1e-10)
                )
                counts[pair.step_index] += 1
    assert all(counts), "every step index must pool pairs from all episodes"
    return [s / c for s, c in zip(sums, counts)]


def slope(ys):
    n = len(ys)
    xs = range(n)
    mean_x = (n - 1) / 2
    mean_y = sum(ys) / n
    return sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys)) / sum(
        (x - mean_x) ** 2 for x in xs
    )


def test_acceptance_error_accumulation_separates_rollout_regimes():
    """An imperfect simulator on a noisy corpus: conditioning on its own
    outputs accumulates error over steps, teacher forcing stays flat, and the
    full-trajectory aggregate is strictly worse."""
    with Budget(300, "accumulation study") as budget:
        oracle_cfg = default_oracle_config(noise_sigma=0.05, seed=31)
        n_steps = 18
        corpus = generate_synthetic_corpus(
            oracle_cfg,
            GenConfig(n_episodes=200, steps_min=n_steps, steps_max=22),
            seed=2718,
        )
        model = AnchoredOracleModel(oracle_cfg)
        full, nxt = full_and_next(corpus, model, seed=2718)

        _, full_agg = evaluate_batch(list(zip(full, corpus)), RANGES)
        _, next_agg = evaluate_batch(list(zip(nxt, corpus)), RANGES)
        assert full_agg.smape > next_agg.smape, (
            f"full {full_agg.smape:.4f} vs next {next_agg.smape:.4f}"
        )

        full_curve = per_step_smape(full, corpus, n_steps)
        next_curve = per_step_smape(nxt, corpus, n_steps)

        # teacher forcing: flat error profile
        assert abs(slope(next_curve)) < 1e-3, f"next slope {slope(next_curve):.5f}"

        # own-output conditioning: rising error profile
        assert slope(full_curve) > 0, f"full slope {slope(full_curve):.5f}"
        quarter = n_steps // 4
        bucket_means = [
            sum(full_curve[i : i + quarter]) / quarter
            for i in range(0, quarter * 4, quarter)
        ]
        for earlier, later in zip(bucket_means, bucket_means[1:]):
            assert later >= earlier - 0.005, bucket_means
        assert bucket_means[-1] > bucket_means[0]
    print(
        f"accumulation: full smape {full_agg.smape:.4f} > next {next_agg.smape:.4f}; "
        f"full curve {full_curve[0]:.4f}->{full_curve[-1]:.4f}, "
        f"next slope {slope(next_curve):.6f}, {budget.elapsed:.1f}s"
    )


# --- 5. injected jumps are exactly counted and harder to track --------------------------


def test_acceptance_injected_jumps_exact_and_harder():
    """Exact-count surge injection yields precisely k jump positions per
    episode, and an imperfect simulator scores no better on that subset than
    on the full set of observations."""
    k = 2
    with Budget(60, "surge subset"):
        quiet = default_oracle_config(noise_sigma=0.0, seed=88)
        corpus = generate_synthetic_corpus(
            quiet,
            GenConfig(
                n_episodes=40,
                steps_min=10,
                steps_max=14,
                intervention_probability=0.0,
                hs_exact_per_episode=k,
            ),
            seed=907,
        )
        for episode in corpus:
            assert len(high_sensitivity_subset(episode)) == k, episode.admission_id

        noisy_anchor = AnchoredOracleModel(
            default_oracle_config(noise_sigma=0.05, seed=88)
        )
        predicted = [
            rollout(
                episode,
                noisy_anchor,
                RolloutMode.FULL_TRAJECTORY,
                derive_episode_seed(907, index),
            ).predicted
            for index, episode in enumerate(corpus)
        ]
        _, aggregate = evaluate_batch(list(zip(predicted, corpus)), RANGES)
        hs = aggregate.high_sensitivity
        assert hs is not None
        assert hs.n == 40 * k
        assert hs.s_at_25 <= aggregate.s_at[25], (
            f"subset {hs.s_at_25:.3f} vs global {aggregate.s_at[25]:.3f}"
        )
    print(
        f"surges: every episode at exactly {k}; subset S@25 {hs.s_at_25:.3f} "
        f"<= global {aggregate.s_at[25]:.3f}"
    )


# --- 6. corpus pipeline invariants -------------------------------------------------


def test_acceptance_pipeline_invariants_hold():
    """Filtering leaves zero residual violations, 100 split seeds never leak a
    patient, and the percentile rule matches its brute-force definition."""
    with Budget(60, "pipeline invariants"):
        corpus = generate_synthetic_corpus(
            default_oracle_config(noise_sigma=0.0, seed=55),
            GenConfig(n_episodes=100, steps_min=4, steps_max=10, multi_admission_fraction=0.3),
            seed=1234,
        )

        kept, report = filter_corpus(corpus, FilterConfig())
        assert report.kept + report.rejected == len(corpus)
        assert sum(report.rejections_by_rule.values()) == report.rejected
        residual = [e for e in kept if report.thresholds.violations(e)]
        assert residual == []

        for seed in range(100):
            train, test = split_by_patient(corpus, SplitConfig(0.25, seed=seed))
            leaked = {e.subject_id for e in train} & {e.subject_id for e in test}
            assert leaked == set(), f"seed {seed}: {leaked}"
            assert len(train) + len(test) == len(corpus)

        rng = random.Random(6021)
        assert nearest_rank_percentile(list(range(1, 11)), 0.90) == 9
        for _ in range(1000):
            values = [rng.uniform(-1000, 1000) for _ in range(rng.randint(1, 50))]
            p = rng.uniform(0.01, 1.0)
            ordered = sorted(values)
            expected = ordered[max(1, math.ceil(p * len(values))) - 1]
            assert nearest_rank_percentile(values, p) == expected
    print(
        f"pipeline: {report.kept} kept / {report.rejected} rejected with zero "
        f"residual violations; 100 leak-free splits; 1000 percentile agreements"
    )


# --- 7. command-line runs are byte-reproducible ------------------------------------


def test_acceptance_cli_byte_determinism(tmp_path):
    """generate, rollout, and split rewrite byte-identical outputs when rerun
    with the same seeds (manifests carry wall-clock and are exempt)."""

    def digest(path):
        return hashlib.sha256(path.read_bytes()).hexdigest()

    with Budget(60, "reproducible runs"):
        spec = tmp_path / "backend.json"
        spec.write_text(json.dumps({"type": "oracle", "noise_sigma": 0.05, "seed": 9}))

        corpora, rollouts, splits = [], [], []
        for tag in ("first", "second"):
            corpus = tmp_path / f"{tag}.jsonl"
            assert main(["generate", "--n", "12", "--seed", "77", "--out", str(corpus)]) == EXIT_OK
            corpora.append(digest(corpus))

            pred = tmp_path / f"{tag}.pred.jsonl"
            assert (
                main(
                    [
                        "rollout",
                        "--in", str(corpus),
                        "--backend", str(spec),
                        "--mode", "full",
                        "--seed", "31",
                        "--jobs", "3",
                        "--out", str(pred),
                    ]
                )
                == EXIT_OK
            )
            rollouts.append(digest(pred))

            train = tmp_path / f"{tag}.train.jsonl"
            test = tmp_path / f"{tag}.test.jsonl"
            assert (
                main(
                    [
                        "split",
                        "--in", str(corpus),
                        "--train", str(train),
                        "--test", str(test),
                        "--fraction", "0.25",
                        "--seed", "5",
                    ]
                )
                == EXIT_OK
            )
            splits.append((digest(train), digest(test)))

        assert corpora[0] == corpora[1]
        assert rollouts[0] == rollouts[1]
        assert splits[0] == splits[1]
    print(f"reproducible: corpus {corpora[0][:12]}, rollout {rollouts[0][:12]}")


# --- 8. remote reply contract ------------------------------------------------------


def test_acceptance_remote_contract_enforced():
    """The remote client retries exactly as budgeted, rejects count and type
    violations, and never lets an intervention carry a value."""
    state = PatientState(
        now=60,
        profile=StaticProfile(60, "male", "", "chest pain", ""),
        diagnostics=DiagnosticProfile(DiagnosisEntry("nstemi", ""), ()),
        history=(),
    )
    actions = [
        Action(ActionKind.INQUIRY, "sodium"),
        Action(ActionKind.INTERVENTION, "saline"),
    ]
    good = json.dumps({"1": {"value": 140.0, "unit": "mEq/L"}, "2": None})

    with Budget(30, "remote contract"):
        # exact retry budget: max_retries=2 means exactly 3 requests
        calls = {"n": 0}

        def always_garbage(request):
            calls["n"] += 1
            return httpx.Response(
                200, json={"choices": [{"message": {"content": "garbage"}}]}
            )

        cfg = RemoteConfig(
            endpoint_url="http://stub/v1/chat/completions",
            model_name="stub",
            max_retries=2,
        )
        with RemoteModel(cfg, transport=httpx.MockTransport(always_garbage)) as model:
            with pytest.raises(ExhaustedRetriesError) as err:
                model.predict(state, actions)
        assert calls["n"] == 3
        assert err.value.attempts == 3

        # recovery consumes exactly one retry
        calls["n"] = 0

        def garbage_then_good(request):
            calls["n"] += 1
            content = "garbage" if calls["n"] == 1 else good
            return httpx.Response(
                200, json={"choices": [{"message": {"content": content}}]}
            )

        with RemoteModel(cfg, transport=httpx.MockTransport(garbage_then_good)) as model:
            outcomes = model.predict(state, actions)
        assert calls["n"] == 2
        assert isinstance(outcomes[1], EmptyOutcome)

        # count violations rejected in both directions
        with pytest.raises(CountMismatchError):
            parse_model_reply(json.dumps({"1": 140.0}), actions)
        with pytest.raises(CountMismatchError):
            parse_model_reply(
                json.dumps({"1": 140.0, "2": None, "3": 1.0}), actions
            )

        # an intervention carrying a value is a type violation
        with pytest.raises(TypeMismatchError):
            parse_model_reply(json.dumps({"1": 140.0, "2": 17.0}), actions)

        # a compliant reply maps interventions to the empty outcome
        outcomes = parse_model_reply(good, actions)
        assert isinstance(outcomes[1], EmptyOutcome)

        # the full backend path also yields only empty intervention outcomes
        registry_model = build_backend(
            {"type": "oracle", "noise_sigma": 0.05, "seed": 3}
        )
        for outcome, action in zip(
            registry_model.predict(state, actions, session_seed=1), actions
        ):
            if action.kind is ActionKind.INTERVENTION:
                assert isinstance(outcome, EmptyOutcome)
    print("remote contract: 3-attempt budget exact, count/type violations rejected")
