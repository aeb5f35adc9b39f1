"""Exception hierarchy shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class CorpusError(PipelineError):
    """Malformed dataset file or record; message names the offending line."""


class TransportError(PipelineError):
    """A backend call failed at the network level after exhausting retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class DecodeError(PipelineError):
    """A backend produced output that could not be decoded into a trace."""


class UnsupportedOperationError(PipelineError):
    """The backend lacks the capability required by the requested call."""


class WalkError(PipelineError):
    """A trace is not a valid walk of the given world, or no walk exists."""


class CheckpointError(PipelineError):
    """A run checkpoint is missing, corrupt, or fails hash validation."""


class ConfigError(PipelineError):
    """Invalid run configuration."""
