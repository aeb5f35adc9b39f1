"""Live backend speaking the OpenAI-compatible chat-completions protocol.

Requests go to ``{base_url}/chat/completions`` with the API key read from an
environment variable. The thinking channel is taken from the response
message's ``reasoning`` (or ``reasoning_content``) field when present, else
from ``<think>...</think>`` tags in the text. Transient failures retry with
exponential backoff; sustained failure surfaces a ``TransportError`` carrying
the attempt count.
"""

from __future__ import annotations

import os
import time
from typing import Any, Callable, Sequence

import httpx

from ..corpus import Example, Label, LabelSpace, normalize_label
from ..errors import DecodeError, TransportError, UnsupportedOperationError
from .base import (
    Backend,
    BackendCaps,
    ChannelledOutput,
    DecodeParams,
    Provenance,
    ReasoningTrace,
    extract_channels,
)
from .ratelimit import TokenBucket

_RETRYABLE_STATUS = frozenset({408, 409, 429, 500, 502, 503, 504})

PREDICT_INSTRUCTION = (
    "Think step by step, then give your final answer on the last line in the form "
    "'Answer: <label>'."
)
JUSTIFY_INSTRUCTION = (
    "The correct answer to the question below is: {label}.\n"
    "Explain step by step, one step per line, why this answer is correct. "
    "Do not mention that the answer was provided to you."
)
LABEL_ONLY_INSTRUCTION = (
    "Given the question and the reasoning below, reply with only the final answer label "
    "and nothing else."
)


def parse_answer_line(output: str, label_space: LabelSpace) -> Label | None:
    """Pull the predicted label from the output channel.

    Prefers the last ``Answer:`` line; otherwise tries the last non-empty line.
    """
    lines = [line.strip() for line in output.splitlines() if line.strip()]
    for line in reversed(lines):
        lowered = line.lower()
        if lowered.startswith("answer:") or lowered.startswith("answer -"):
            return normalize_label(line.split(":", 1)[-1] if ":" in line else line[8:], label_space)
    if lines:
        return normalize_label(lines[-1], label_space)
    return None


def strip_answer_line(output: str) -> str:
    """Drop a trailing ``Answer:`` line so it does not count as a reasoning step."""
    lines = output.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if lines and lines[-1].strip().lower().startswith("answer"):
        lines.pop()
    return "\n".join(lines).strip()


class OpenAICompatBackend(Backend):
    """Reasoner/verifier over an OpenAI-compatible HTTP endpoint.

    Holds per-call state only, so one instance may serve many workers; an
    optional shared :class:`TokenBucket` throttles the aggregate request rate.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        label_space: LabelSpace,
        api_key_env: str = "OPENAI_API_KEY",
        supports_thinking: bool = True,
        retries: int = 3,
        backoff_base: float = 0.5,
        reprompt_count: int = 8,
        rate_limiter: TokenBucket | None = None,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if retries < 1:
            raise ValueError("retries must be at least 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.label_space = label_space
        self.api_key_env = api_key_env
        self.supports_thinking = supports_thinking
        self.retries = retries
        self.backoff_base = backoff_base
        self.reprompt_count = reprompt_count
        self.rate_limiter = rate_limiter
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @property
    def backend_id(self) -> str:
        return f"{self.base_url}#{self.model}"

    def caps(self) -> BackendCaps:
        return BackendCaps(
            supports_thinking=self.supports_thinking,
            supports_trace_logprob=False,
            supports_conditional_label_prob=False,
        )

    # -- wire level ---------------------------------------------------------

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, messages: list[dict[str, str]], decode: DecodeParams) -> ChannelledOutput:
        """One chat-completions round trip with retries and rate limiting."""
        payload: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": decode.temperature,
            "top_p": decode.top_p,
            "max_tokens": decode.max_tokens,
        }
        if decode.seed is not None:
            payload["seed"] = decode.seed

        last_error = "no attempt made"
        for attempt in range(1, self.retries + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                response = self._client.post(
                    f"{self.base_url}/chat/completions", json=payload, headers=self._headers()
                )
            except httpx.HTTPError as exc:
                last_error = f"transport failure: {exc}"
            else:
                if response.status_code == 200:
                    return self._parse_response(response.json())
                last_error = f"HTTP {response.status_code}: {response.text[:200]}"
                if response.status_code not in _RETRYABLE_STATUS:
                    raise TransportError(
                        f"{self.backend_id}: {last_error} (attempt {attempt})", attempts=attempt
                    )
            if attempt < self.retries:
                self._sleep(self.backoff_base * (2 ** (attempt - 1)))
        raise TransportError(
            f"{self.backend_id}: {last_error} (after {self.retries} attempts)",
            attempts=self.retries,
        )

    def _parse_response(self, body: dict[str, Any]) -> ChannelledOutput:
        try:
            message = body["choices"][0]["message"]
            content = message.get("content") or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise DecodeError(f"malformed chat-completions response: {exc}") from exc
        reasoning = message.get("reasoning") or message.get("reasoning_content")
        return extract_channels(content, reasoning_field=reasoning)

    # -- backend contract ---------------------------------------------------

    def predict_with_reasoning(
        self, x: Example, decode: DecodeParams
    ) -> tuple[ReasoningTrace, Label | None]:
        channels = self.chat(
            [{"role": "user", "content": f"{x.question}\n\n{PREDICT_INSTRUCTION}"}], decode
        )
        label = parse_answer_line(channels.output, self.label_space)
        if channels.thinking:
            trace_text = channels.thinking
        else:
            trace_text = strip_answer_line(channels.output) or channels.output
        trace = ReasoningTrace.from_text(trace_text, Provenance.ZERO_SHOT, predicted_label=label)
        return trace, label

    def justify(self, x: Example, y: Label, decode: DecodeParams) -> ReasoningTrace:
        instruction = JUSTIFY_INSTRUCTION.format(label=y.value)
        channels = self.chat(
            [{"role": "user", "content": f"{instruction}\n\n{x.question}"}], decode
        )
        # Hint-contamination guard: only the output channel survives.
        return ReasoningTrace.from_text(channels.output, Provenance.GUIDED, predicted_label=y)

    def label_probability(self, x: Example, trace: ReasoningTrace) -> dict[str, float]:
        if self.label_space.is_free_form:
            raise UnsupportedOperationError(
                "label_probability needs a finite label space; this backend is free-form"
            )
        options = list(self.label_space.options or ())
        counts = {opt: 0 for opt in options}
        parseable = 0
        base_seed = 0
        prompt = (
            f"{x.question}\n\nReasoning:\n{trace.raw_text}\n\n{LABEL_ONLY_INSTRUCTION}"
        )
        for m in range(self.reprompt_count):
            decode = DecodeParams(temperature=1.0, top_p=1.0, max_tokens=16, seed=base_seed + m)
            channels = self.chat([{"role": "user", "content": prompt}], decode)
            label = normalize_label(channels.output, self.label_space)
            if label is not None:
                counts[label.value] += 1
                parseable += 1
        if parseable == 0:
            raise DecodeError(
                f"{self.backend_id}: none of {self.reprompt_count} label re-prompts parsed"
            )
        return {opt: counts[opt] / parseable for opt in options}

    def consolidate(
        self,
        x: Example,
        rplus: Sequence[ReasoningTrace],
        prompt: str,
        decode: DecodeParams,
    ) -> ChannelledOutput:
        return self.chat([{"role": "user", "content": prompt}], decode)

    def close(self) -> None:
        self._client.close()
