"""Clinical trajectory simulation: patient states, outcome backends, rollouts, metrics."""

from . import errors
from .domain import (
    EMPTY,
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
    Timestamp,
    canonicalize_code,
    validate_episode,
)
from .corpus import read_corpus, write_corpus
from .engine import (
    Engine,
    RolloutMode,
    RolloutResult,
    Session,
    SessionStore,
    StepRequest,
    derive_episode_seed,
    rollout,
    rollout_full,
    rollout_next_step,
)
from .backends import (
    AnchoredOracleModel,
    OracleConfig,
    OracleModel,
    OutcomeModel,
    RemoteConfig,
    RemoteModel,
    ReplayModel,
    build_backend,
    build_registry,
    default_oracle_config,
    default_reference_ranges,
)
from .metrics import (
    LabelPair,
    MetricsReport,
    NumericPair,
    ReferenceRange,
    ReferenceRangeTable,
    RetentionReport,
    avg_score,
    bucket_errors,
    evaluate,
    evaluate_batch,
    high_sensitivity_subset,
    label_prf,
    relative_error,
    retention,
    smape,
    stat_f1,
    success_at,
)
from .pipeline import (
    FilterConfig,
    GenConfig,
    SplitConfig,
    compute_corpus_stats,
    filter_corpus,
    generate_synthetic_corpus,
    split_by_patient,
)

__version__ = "0.1.0"

__all__ = [
    "EMPTY",
    "Action",
    "ActionKind",
    "AnchoredOracleModel",
    "DiagnosisEntry",
    "DiagnosticProfile",
    "EmptyOutcome",
    "Engine",
    "Episode",
    "Event",
    "EventSet",
    "FilterConfig",
    "GenConfig",
    "LabelOutcome",
    "LabelPair",
    "MetricsReport",
    "NumericOutcome",
    "NumericPair",
    "OracleConfig",
    "OracleModel",
    "Outcome",
    "OutcomeModel",
    "PatientState",
    "ReferenceRange",
    "ReferenceRangeTable",
    "RemoteConfig",
    "RemoteModel",
    "ReplayModel",
    "RetentionReport",
    "RolloutMode",
    "RolloutResult",
    "Session",
    "SessionStore",
    "SplitConfig",
    "StaticProfile",
    "StepRequest",
    "Timestamp",
    "avg_score",
    "bucket_errors",
    "build_backend",
    "build_registry",
    "canonicalize_code",
    "compute_corpus_stats",
    "default_oracle_config",
    "default_reference_ranges",
    "derive_episode_seed",
    "errors",
    "evaluate",
    "evaluate_batch",
    "filter_corpus",
    "generate_synthetic_corpus",
    "high_sensitivity_subset",
    "label_prf",
    "read_corpus",
    "relative_error",
    "retention",
    "rollout",
    "rollout_full",
    "rollout_next_step",
    "smape",
    "split_by_patient",
    "stat_f1",
    "success_at",
    "validate_episode",
    "write_corpus",
]
