"""Exception types shared across the package.

Grouped by the layer that raises them; all inherit from TrajsimError so
callers can catch the whole family at an API boundary.
"""

from __future__ import annotations


class TrajsimError(Exception):
    """Base class for every error raised by this package."""


# --- domain / corpus files -------------------------------------------------

class EmptyCodeError(TrajsimError):
    """A code canonicalized to the empty string."""


class CorpusFormatError(TrajsimError):
    """A corpus file is missing its header or carries a wrong format/version."""


# --- simulation engine -----------------------------------------------------

class EngineError(TrajsimError):
    pass


class UnknownBackendError(EngineError):
    """A backend reference did not resolve to a registered outcome model."""


class UnknownSessionError(EngineError):
    """A session id is not present in the session store."""


class NonMonotonicTimeError(EngineError):
    """A step was requested at or before the session's current time."""


class MalformedOutcomeError(EngineError):
    """The backend returned outcomes violating the count or kind contract."""


class BackendFailureError(EngineError):
    """The backend failed (transport, parsing, lookup); the cause is chained."""


class OutOfRangeError(EngineError):
    """A branch point exceeds the session's history length."""


class ConcurrentStepError(EngineError):
    """A second step was attempted while one is in flight on the same session."""


class RolloutStepError(EngineError):
    """A step failed during a rollout; carries the failing step index."""

    def __init__(self, step_index: int, message: str):
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index


# --- outcome backends ------------------------------------------------------

class BackendError(TrajsimError):
    pass


class UnknownAnalyteError(BackendError):
    """An inquiry code is not declared in the oracle configuration."""


class UnsupportedActionKindError(BackendError):
    pass


class UnknownPlaceholderError(BackendError):
    """A prompt template uses a placeholder outside the documented set."""


class ReplyParseError(BackendError):
    """Base class for structured-reply parsing failures."""


class NoStructuredBlockError(ReplyParseError):
    pass


class CountMismatchError(ReplyParseError):
    pass


class TypeMismatchError(ReplyParseError):
    pass


class TransportError(BackendError):
    """The remote endpoint was unreachable or returned a server error."""


class AuthError(BackendError):
    """Authentication with the remote endpoint failed or was misconfigured."""


class ExhaustedRetriesError(BackendError):
    """All remote attempts failed to parse; the last parse error is attached."""

    def __init__(self, attempts: int, last_error: ReplyParseError):
        super().__init__(f"no parseable reply after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class PositionNotFoundError(BackendError):
    """Replay backend could not match (timestamp, action) to its source."""


# --- pipeline ---------------------------------------------------------------

class PipelineError(TrajsimError):
    pass


class EmptyCorpusError(PipelineError):
    pass


class ConfigError(TrajsimError):
    """A configuration value or file is invalid."""


class SchemaViolationError(PipelineError):
    """An extraction reply does not match the required schema."""

    def __init__(self, missing: list[str], extra: list[str] | None = None):
        self.missing = list(missing)
        self.extra = list(extra or [])
        parts = []
        if self.missing:
            parts.append(f"missing keys: {', '.join(self.missing)}")
        if self.extra:
            parts.append(f"extra keys: {', '.join(self.extra)}")
        super().__init__("; ".join(parts) or "schema violation")


class DegenerateStratumWarning(UserWarning):
    """A stratum holds a single patient and was assigned wholly to train."""


# --- metrics -----------------------------------------------------------------

class MetricsError(TrajsimError):
    pass


class EmptyInputError(MetricsError):
    pass


class NoRangedPairsError(MetricsError):
    """No numeric pair has a reference-range entry for its code."""


class AlignmentError(MetricsError):
    """Predicted and ground-truth trajectories disagree on actions or times."""
