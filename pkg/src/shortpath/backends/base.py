"""Reasoner/verifier backend contract and the trace data model.

Every model in the system, live LLM or simulator, is reached through the
same call surface: sample a prediction with its reasoning, justify a given
label, score a label distribution conditioned on a trace, and consolidate a
pool of successful traces. Outputs are split into an optional *thinking*
channel (intermediate chain-of-thought) and the externally visible *output*
channel; guided traces are built from the output channel only so a provided
hint can never leak through the thinking channel.
"""

from __future__ import annotations

import enum
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Any, Sequence

from ..corpus import Example, Label
from ..errors import DecodeError

_THINK_TAG = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


class Provenance(str, enum.Enum):
    ZERO_SHOT = "zero_shot"
    GUIDED = "guided"
    SYNTHESIZED = "synthesized"


@dataclass(frozen=True)
class DecodeParams:
    """Sampling knobs forwarded to the backend; ``seed`` keys the rng stream."""

    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 2048
    seed: int | None = None

    def with_seed(self, seed: int) -> "DecodeParams":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class ChannelledOutput:
    """A backend response split into thinking and output channels."""

    output: str
    thinking: str | None = None


@dataclass(frozen=True)
class BackendCaps:
    supports_thinking: bool
    supports_trace_logprob: bool
    supports_conditional_label_prob: bool


@dataclass(frozen=True)
class ReasoningTrace:
    """An ordered step sequence with its prediction and provenance.

    ``token_count`` counts whitespace-delimited tokens of ``raw_text``;
    ``logprob`` is the natural-log probability of the trace under the model
    that produced it, when that model can report one.
    """

    steps: tuple[str, ...]
    raw_text: str
    predicted_label: Label | None
    provenance: Provenance
    token_count: int
    logprob: float | None = None

    def __post_init__(self) -> None:
        if len(self.steps) < 1:
            raise DecodeError("a reasoning trace needs at least one step")
        if any(not s for s in self.steps):
            raise DecodeError("trace steps must be non-empty strings")
        if self.token_count < len(self.steps):
            raise DecodeError("token_count cannot be below the step count")

    @classmethod
    def from_text(
        cls,
        text: str,
        provenance: Provenance,
        predicted_label: Label | None = None,
        logprob: float | None = None,
    ) -> "ReasoningTrace":
        steps = split_steps(text)
        if not steps:
            raise DecodeError("empty text cannot form a reasoning trace")
        return cls(
            steps=tuple(steps),
            raw_text=text,
            predicted_label=predicted_label,
            provenance=provenance,
            token_count=len(text.split()),
            logprob=logprob,
        )


def split_steps(text: str) -> list[str]:
    """Split trace text into steps on newlines, falling back to sentences."""
    lines = [line.strip() for line in text.splitlines()]
    steps = [line for line in lines if line]
    if len(steps) > 1:
        return steps
    stripped = text.strip()
    if not stripped:
        return []
    sentences = [s.strip() for s in _SENTENCE_SPLIT.split(stripped) if s.strip()]
    return sentences if sentences else [stripped]


def extract_channels(content: str, reasoning_field: str | None = None) -> ChannelledOutput:
    """Separate thinking from output.

    Prefers an explicit reasoning field from the wire response; otherwise
    honors the ``<think>...</think>`` tag convention inside the text.
    """
    if reasoning_field is not None:
        return ChannelledOutput(output=content.strip(), thinking=reasoning_field.strip() or None)
    matches = _THINK_TAG.findall(content)
    if matches:
        thinking = "\n".join(m.strip() for m in matches if m.strip()) or None
        output = _THINK_TAG.sub("", content).strip()
        return ChannelledOutput(output=output, thinking=thinking)
    return ChannelledOutput(output=content.strip(), thinking=None)


class Backend(ABC):
    """Abstract reasoner/verifier; instances must be safe to call concurrently."""

    @property
    @abstractmethod
    def backend_id(self) -> str: ...

    @abstractmethod
    def caps(self) -> BackendCaps: ...

    @abstractmethod
    def predict_with_reasoning(
        self, x: Example, decode: DecodeParams
    ) -> tuple[ReasoningTrace, Label | None]:
        """Zero-shot sample: reasoning steps plus the predicted label.

        For thinking backends the steps come from the thinking channel; the
        label is always parsed from the output channel.
        """

    @abstractmethod
    def justify(self, x: Example, y: Label, decode: DecodeParams) -> ReasoningTrace:
        """Guided sample: a stepwise justification of ``y``.

        The prompt reveals ``y`` but asks the model not to mention the hint;
        the thinking channel is discarded unconditionally and the returned
        trace is parsed from the output channel only.
        """

    @abstractmethod
    def label_probability(self, x: Example, trace: ReasoningTrace) -> dict[str, float]:
        """Normalized distribution over the finite label space given a trace."""

    @abstractmethod
    def consolidate(
        self,
        x: Example,
        rplus: Sequence[ReasoningTrace],
        prompt: str,
        decode: DecodeParams,
    ) -> ChannelledOutput:
        """Verifier call: rewrite a pool of successful traces into one short path.

        ``prompt`` is the fully rendered consolidation request; backends that
        do not prompt (the simulator) may consolidate from ``rplus`` directly.
        """


def argmax_label(distribution: dict[str, float], label_order: Sequence[str]) -> Label:
    """Deterministic argmax: ties break toward the earliest declared label."""
    if not label_order:
        raise ValueError("empty label order")
    best_p = max(distribution.get(v, 0.0) for v in label_order)
    for value in label_order:
        if distribution.get(value, 0.0) == best_p:
            return Label(value)
    raise AssertionError("unreachable")


def trace_to_record(trace: ReasoningTrace) -> dict[str, Any]:
    return {
        "steps": list(trace.steps),
        "text": trace.raw_text,
        "prediction": trace.predicted_label.value if trace.predicted_label else None,
        "provenance": trace.provenance.value,
        "token_count": trace.token_count,
        "logprob": trace.logprob,
    }


def trace_from_record(record: dict[str, Any]) -> ReasoningTrace:
    return ReasoningTrace(
        steps=tuple(record["steps"]),
        raw_text=record["text"],
        predicted_label=Label(record["prediction"]) if record.get("prediction") else None,
        provenance=Provenance(record["provenance"]),
        token_count=int(record["token_count"]),
        logprob=record.get("logprob"),
    )
