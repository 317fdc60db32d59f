"""Batch entry points: generate, filter, split, stats, rollout, evaluate, serve, extract.

Every command writes a manifest sidecar (seeds, config digests, output
digests, wall-clock) so a run can be reproduced and its outputs compared
by digest. Manifests carry timestamps and are the only outputs exempt from
byte-for-byte determinism.

Exit codes: 0 success, 2 config error, 3 runtime/environment error,
4 data-validation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import socket
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import __version__
from .backends import build_backend
from .backends.oracle import OracleConfig, default_oracle_config, default_reference_ranges
from .backends.remote import RemoteConfig, RemoteModel
from .corpus import read_corpus, write_corpus
from .domain import (
    diagnostics_to_dict,
    dumps_canonical,
    profile_to_dict,
    validate_episode,
)
from .engine import RolloutMode, derive_episode_seed, rollout
from .errors import (
    AlignmentError,
    BackendError,
    ConfigError,
    CorpusFormatError,
    MetricsError,
    PipelineError,
    SchemaViolationError,
    TrajsimError,
)
from .metrics import (
    ReferenceRangeTable,
    bucket_errors,
    evaluate_batch,
    extract_pairs,
    load_reference_ranges,
)
from .pipeline import (
    FilterConfig,
    GenConfig,
    SplitConfig,
    assemble_episodes,
    compute_corpus_stats,
    extraction_template,
    filter_corpus,
    generate_synthetic_corpus,
    parse_extraction_reply,
    split_by_patient,
)

log = logging.getLogger("trajsim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_DATA = 4


# --- manifests -----------------------------------------------------------------------


def _sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ManifestWriter:
    """Collects run provenance and writes the sidecar on success."""

    def __init__(self, command: str, argv: Sequence[str], manifest_path: str | None):
        self.command = command
        self.argv = list(argv)
        self.manifest_path = manifest_path
        self.started_at = time.time()
        self.seeds: dict[str, int] = {}
        self.configs: dict[str, str] = {}
        self.inputs: dict[str, dict] = {}
        self.outputs: dict[str, dict] = {}

    def seed(self, name: str, value: int) -> None:
        self.seeds[name] = value

    def config_file(self, name: str, path: str | None) -> None:
        if path:
            self.configs[name] = _sha256_file(path)

    def config_value(self, name: str, payload: Any) -> None:
        canonical = dumps_canonical(payload)
        self.configs[name] = hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def input_file(self, name: str, path: str | None) -> None:
        if path:
            self.inputs[name] = {"path": str(path), "sha256": _sha256_file(path)}

    def output_file(self, name: str, path: str | None) -> None:
        if path:
            self.outputs[name] = {"path": str(path), "sha256": _sha256_file(path)}

    def write(self) -> None:
        if not self.manifest_path:
            return
        finished = time.time()
        record = {
            "command": self.command,
            "argv": self.argv,
            "version": __version__,
            "seeds": self.seeds,
            "config_digests": self.configs,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "started_at": self.started_at,
            "finished_at": finished,
            "duration_seconds": finished - self.started_at,
        }
        with open(self.manifest_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
        log.info("manifest written to %s", self.manifest_path)


def _default_manifest(out_path: str) -> str:
    return out_path + ".manifest.json"


def _write_json(path: str, payload: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _oracle_from_payload(payload: Mapping[str, Any] | None) -> OracleConfig:
    if not payload:
        return default_oracle_config()
    if "analytes" in payload:
        return OracleConfig.from_dict(payload)
    extra = set(payload) - {"noise_sigma", "seed"}
    if extra:
        raise ConfigError(f"unknown oracle config keys: {sorted(extra)}")
    return default_oracle_config(**payload)


# --- subcommands ----------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    payload: Mapping[str, Any] = _read_json(args.config) if args.config else {}
    if not isinstance(payload, Mapping):
        raise ConfigError("generator config must be a JSON object")
    gen_payload = dict(payload.get("generator", {}))
    if args.n is not None:
        gen_payload["n_episodes"] = args.n
    if "n_episodes" not in gen_payload:
        raise ConfigError("need n_episodes (config file or --n)")
    gen_cfg = GenConfig.from_dict(gen_payload)
    oracle_cfg = _oracle_from_payload(payload.get("oracle"))

    manifest = ManifestWriter(
        "generate", argv, args.manifest or _default_manifest(args.out)
    )
    manifest.seed("corpus", args.seed)
    manifest.config_file("generate", args.config)
    manifest.config_value("oracle", oracle_cfg.to_dict())

    episodes = generate_synthetic_corpus(oracle_cfg, gen_cfg, args.seed)
    count = write_corpus(args.out, episodes)
    log.info("wrote %d episodes to %s", count, args.out)
    manifest.output_file("corpus", args.out)
    manifest.write()
    return EXIT_OK


def cmd_filter(args: argparse.Namespace, argv: Sequence[str]) -> int:
    cfg_payload = _read_json(args.config) if args.config else {}
    cfg = FilterConfig(**cfg_payload) if cfg_payload else FilterConfig()
    corpus = read_corpus(args.infile)
    kept, report = filter_corpus(corpus, cfg)

    manifest = ManifestWriter(
        "filter", argv, args.manifest or _default_manifest(args.out)
    )
    manifest.config_file("filter", args.config)
    manifest.input_file("corpus", args.infile)

    write_corpus(args.out, kept)
    _write_json(args.report, report.to_dict())
    log.info(
        "kept %d of %d episodes (%d rejected)",
        report.kept,
        report.kept + report.rejected,
        report.rejected,
    )
    manifest.output_file("kept", args.out)
    manifest.output_file("report", args.report)
    manifest.write()
    return EXIT_OK


def cmd_split(args: argparse.Namespace, argv: Sequence[str]) -> int:
    cfg = SplitConfig(
        test_fraction=args.fraction, seed=args.seed, stratify=not args.no_stratify
    )
    corpus = read_corpus(args.infile)
    train, test = split_by_patient(corpus, cfg)

    manifest = ManifestWriter(
        "split", argv, args.manifest or _default_manifest(args.train)
    )
    manifest.seed("split", args.seed)
    manifest.input_file("corpus", args.infile)

    write_corpus(args.train, train)
    write_corpus(args.test, test)
    report_path = args.report or args.train + ".split.json"
    _write_json(
        report_path,
        {
            "test_fraction": args.fraction,
            "seed": args.seed,
            "stratify": not args.no_stratify,
            "train_admissions": [e.admission_id for e in train],
            "test_admissions": [e.admission_id for e in test],
        },
    )
    log.info("split %d episodes into %d train / %d test", len(corpus), len(train), len(test))
    manifest.output_file("train", args.train)
    manifest.output_file("test", args.test)
    manifest.output_file("report", report_path)
    manifest.write()
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, argv: Sequence[str]) -> int:
    corpus = read_corpus(args.infile)
    stats = compute_corpus_stats(corpus)
    manifest = ManifestWriter(
        "stats", argv, args.manifest or _default_manifest(args.out)
    )
    manifest.input_file("corpus", args.infile)
    _write_json(args.out, stats.to_dict())
    log.info("stats over %d episodes written to %s", stats.n_episodes, args.out)
    manifest.output_file("report", args.out)
    manifest.write()
    return EXIT_OK


def cmd_rollout(args: argparse.Namespace, argv: Sequence[str]) -> int:
    backend_payload = _read_json(args.backend) if args.backend else {"type": "oracle"}
    backend = build_backend(backend_payload)
    mode = RolloutMode(args.mode)
    corpus = read_corpus(args.infile)

    manifest = ManifestWriter(
        "rollout", argv, args.manifest or _default_manifest(args.out)
    )
    manifest.seed("rollout", args.seed)
    manifest.config_file("backend", args.backend)
    manifest.input_file("corpus", args.infile)

    def one(index: int):
        episode_seed = derive_episode_seed(args.seed, index)
        return rollout(corpus[index], backend, mode, episode_seed).predicted

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            predicted = list(pool.map(one, range(len(corpus))))
    else:
        predicted = [one(i) for i in range(len(corpus))]

    write_corpus(args.out, predicted)
    log.info("rolled out %d episodes (%s mode) to %s", len(predicted), mode.value, args.out)
    manifest.output_file("predictions", args.out)
    manifest.write()
    return EXIT_OK


def _load_ranges(path: str | None) -> ReferenceRangeTable:
    if path:
        return load_reference_ranges(path)
    return ReferenceRangeTable.from_dict(default_reference_ranges())


def cmd_evaluate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    pred = read_corpus(args.pred)
    truth = read_corpus(args.truth)
    if len(pred) != len(truth):
        raise AlignmentError(
            f"{len(pred)} predicted vs {len(truth)} truth episodes"
        )
    ranges = _load_ranges(args.ranges)

    manifest = ManifestWriter(
        "evaluate", argv, args.manifest or _default_manifest(args.out)
    )
    manifest.input_file("pred", args.pred)
    manifest.input_file("truth", args.truth)
    manifest.config_file("ranges", args.ranges)

    per_run, aggregate = evaluate_batch(list(zip(pred, truth)), ranges)
    payload: dict[str, Any] = {
        "aggregate": aggregate.to_dict(),
        "per_episode": [r.to_dict() for r in per_run],
    }
    if args.buckets:
        pairs = []
        for p, t in zip(pred, truth):
            pairs.extend(extract_pairs(p, t).numeric)
        payload["buckets"] = bucket_errors(pairs)
    if args.retention:
        next_report = _read_json(args.retention)
        next_aggregate = next_report.get("aggregate", next_report)
        payload["retention"] = retention_from_dicts(
            next_aggregate, aggregate.to_dict()
        )
    _write_json(args.out, payload)

    summary = aggregate.to_dict()
    log.info(
        "aggregate: S@25=%.3f SMAPE=%.3f avg=%s over %d numeric pairs",
        summary["s_at"]["25"],
        summary["smape"],
        f"{summary['avg_score']:.3f}" if summary["avg_score"] is not None else "n/a",
        summary["n_numeric"],
    )
    manifest.output_file("report", args.out)
    manifest.write()
    return EXIT_OK


def retention_from_dicts(next_summary: Mapping[str, Any], full_summary: Mapping[str, Any]) -> dict:
    """Retention percentages from two serialized aggregate reports."""
    out: dict[str, Any] = {}
    pick: Callable[[Mapping[str, Any]], dict[str, Any]] = lambda s: {
        "s25": s.get("s_at", {}).get("25"),
        "stat_f1": (s.get("stat") or {}).get("f1"),
        "label_f1": (s.get("label") or {}).get("f1"),
        "overall": s.get("avg_score"),
    }
    nxt, full = pick(next_summary), pick(full_summary)
    for key in nxt:
        if nxt[key] is None or full[key] is None:
            continue
        out[key] = None if nxt[key] == 0 else 100.0 * full[key] / nxt[key]
    return out


def cmd_serve(args: argparse.Namespace, argv: Sequence[str]) -> int:
    import uvicorn

    from .service import create_app, load_service_config

    config = load_service_config(args.config)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((config.host, config.port))
    except OSError as exc:
        log.error("cannot bind %s:%d: %s", config.host, config.port, exc)
        return EXIT_RUNTIME
    finally:
        probe.close()

    if args.manifest:
        manifest = ManifestWriter("serve", argv, args.manifest)
        manifest.config_file("service", args.config)
        manifest.write()

    app = create_app(config)
    log.info("serving on %s:%d", config.host, config.port)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace, argv: Sequence[str]) -> int:
    remote_cfg = RemoteConfig.from_dict(_read_json(args.remote_config))
    manifest = ManifestWriter(
        "extract", argv, args.manifest or _default_manifest(args.out)
    )
    manifest.config_file("remote", args.remote_config)
    manifest.input_file("notes", args.notes)

    notes: list[tuple[str, str]] = []
    with open(args.notes, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if isinstance(record, str):
                notes.append((f"note-{lineno}", record))
            else:
                notes.append((str(record.get("id", f"note-{lineno}")), record["text"]))

    skipped = 0
    template = extraction_template()
    with RemoteModel(remote_cfg) as model:
        with open(args.out, "w", encoding="utf-8", newline="\n") as out:
            for note_id, text in notes:
                prompt = template + "\n\n# Discharge Record\n" + text
                try:
                    reply = model.complete(prompt)
                    profile, diagnostics = parse_extraction_reply(reply)
                except SchemaViolationError as exc:
                    log.warning("note %s: schema violation, skipped (%s)", note_id, exc)
                    skipped += 1
                    continue
                except BackendError as exc:
                    log.warning("note %s: backend error, skipped (%s)", note_id, exc)
                    skipped += 1
                    continue
                out.write(
                    dumps_canonical(
                        {
                            "id": note_id,
                            "profile": profile_to_dict(profile),
                            "diagnostics": diagnostics_to_dict(diagnostics),
                        }
                    )
                    + "\n"
                )
    log.info("extracted %d profiles (%d skipped) to %s", len(notes) - skipped, skipped, args.out)
    manifest.output_file("profiles", args.out)
    manifest.write()
    return EXIT_OK


def cmd_assemble(args: argparse.Namespace, argv: Sequence[str]) -> int:
    manifest = ManifestWriter(
        "assemble", argv, args.manifest or _default_manifest(args.out)
    )
    manifest.input_file("statics", args.statics)
    manifest.input_file("events", args.events)

    def rows(path: str):
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)

    episodes = list(assemble_episodes(rows(args.statics), rows(args.events)))
    bad = 0
    for episode in episodes:
        problems = validate_episode(episode)
        if problems:
            log.warning("episode %s invalid: %s", episode.admission_id, problems[0])
            bad += 1
    if bad and not args.keep_invalid:
        raise SchemaViolationError(missing=[f"{bad} invalid episodes (see log)"])
    write_corpus(args.out, episodes)
    log.info("assembled %d episodes to %s", len(episodes), args.out)
    manifest.output_file("corpus", args.out)
    manifest.write()
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajsim",
        description="Clinical trajectory simulation: corpus tools, rollouts, metrics, service.",
    )
    parser.add_argument("--version", action="version", version=f"trajsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--manifest", help="manifest sidecar path (default: <out>.manifest.json)")

    p = sub.add_parser("generate", help="generate a synthetic corpus from the oracle")
    p.add_argument("--config", help="JSON with 'generator' and optional 'oracle' sections")
    p.add_argument("--n", type=int, help="episode count override")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("filter", help="percentile-filter a corpus")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--config", help="JSON FilterConfig overrides")
    common(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("split", help="patient-atomic stratified split")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--report", help="split manifest path (default: <train>.split.json)")
    common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="corpus statistics report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("rollout", help="replay a corpus through a backend")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--backend", help="backend spec JSON (default: noise-free oracle)")
    p.add_argument("--mode", choices=[m.value for m in RolloutMode], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--ranges", help="reference ranges JSON (default: built-in table)")
    p.add_argument("--out", required=True)
    p.add_argument("--buckets", action="store_true", help="include error-band counts")
    p.add_argument(
        "--retention",
        help="next-step report JSON; adds retention of this run against it",
    )
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--config", help="service config JSON")
    common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("extract", help="structured profiles from free-text notes")
    p.add_argument("--notes", required=True, help="JSONL of {id, text} records")
    p.add_argument("--remote-config", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("assemble", help="join static records and event logs into a corpus")
    p.add_argument("--statics", required=True, help="JSONL of static admission records")
    p.add_argument("--events", required=True, help="JSONL of event rows")
    p.add_argument("--out", required=True)
    p.add_argument("--keep-invalid", action="store_true")
    common(p)
    p.set_defaults(func=cmd_assemble)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (CorpusFormatError, MetricsError, PipelineError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_RUNTIME
    except json.JSONDecodeError as exc:
        log.error("malformed JSON input: %s", exc)
        return EXIT_DATA
    except BackendError as exc:
        log.error("backend error: %s", exc)
        return EXIT_RUNTIME
    except TrajsimError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
