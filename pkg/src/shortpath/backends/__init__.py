from .base import (
    Backend,
    BackendCaps,
    ChannelledOutput,
    DecodeParams,
    Provenance,
    ReasoningTrace,
    argmax_label,
    extract_channels,
    split_steps,
    trace_from_record,
    trace_to_record,
)
from .openai_compat import OpenAICompatBackend
from .ratelimit import TokenBucket

__all__ = [
    "Backend",
    "BackendCaps",
    "ChannelledOutput",
    "DecodeParams",
    "OpenAICompatBackend",
    "Provenance",
    "ReasoningTrace",
    "TokenBucket",
    "argmax_label",
    "extract_channels",
    "split_steps",
    "trace_from_record",
    "trace_to_record",
]
