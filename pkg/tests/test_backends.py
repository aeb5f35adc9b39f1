"""Backend contract tests: channel separation, retries, rate limiting.

The live backend is exercised against an in-process httpx mock transport;
no network access is needed.
"""

import json

import httpx
import pytest

from shortpath.backends import (
    DecodeParams,
    OpenAICompatBackend,
    Provenance,
    ReasoningTrace,
    TokenBucket,
    argmax_label,
    extract_channels,
    split_steps,
    trace_from_record,
    trace_to_record,
)
from shortpath.corpus import Example, Label, LabelSpace
from shortpath.errors import DecodeError, TransportError, UnsupportedOperationError

MCQ = LabelSpace.mcq(["A", "B", "C", "D"])
QUESTION = Example(id="q1", question="Which option is correct?", gold_label=Label("B"))

SENTINEL = "TAINTED-THINKING-7f3a"


def chat_response(content, reasoning=None):
    message = {"role": "assistant", "content": content}
    if reasoning is not None:
        message["reasoning"] = reasoning
    return {"choices": [{"message": message}]}


def make_backend(handler, **kwargs):
    transport = httpx.MockTransport(handler)
    defaults = dict(
        base_url="https://llm.test/v1",
        model="test-model",
        label_space=MCQ,
        transport=transport,
        sleep=lambda s: None,
    )
    defaults.update(kwargs)
    return OpenAICompatBackend(**defaults)


class TestChannelExtraction:
    def test_reasoning_field_preferred(self):
        out = extract_channels("final text", reasoning_field="chain here")
        assert out.thinking == "chain here"
        assert out.output == "final text"

    def test_think_tags_fallback(self):
        out = extract_channels("<think>step a\nstep b</think>\nAnswer: B")
        assert out.thinking == "step a\nstep b"
        assert out.output == "Answer: B"

    def test_no_thinking_channel(self):
        out = extract_channels("plain output")
        assert out.thinking is None
        assert out.output == "plain output"


class TestSplitSteps:
    def test_newline_split(self):
        assert split_steps("a\nb\nc") == ["a", "b", "c"]

    def test_sentence_fallback(self):
        assert split_steps("First thing. Second thing! Third?") == [
            "First thing.",
            "Second thing!",
            "Third?",
        ]

    def test_single_fragment(self):
        assert split_steps("just one fragment") == ["just one fragment"]

    def test_empty(self):
        assert split_steps("   ") == []


class TestPredict:
    def test_thinking_backend_steps_come_from_thinking(self):
        def handler(request):
            return httpx.Response(
                200, json=chat_response("Answer: B", reasoning="clue one\nclue two")
            )

        backend = make_backend(handler)
        trace, label = backend.predict_with_reasoning(QUESTION, DecodeParams())
        assert label == Label("B")
        assert trace.steps == ("clue one", "clue two")
        assert trace.provenance == Provenance.ZERO_SHOT

    def test_unparseable_label_is_verdict_not_error(self):
        def handler(request):
            return httpx.Response(200, json=chat_response("I refuse to answer."))

        trace, label = make_backend(handler).predict_with_reasoning(QUESTION, DecodeParams())
        assert label is None
        assert trace.predicted_label is None

    def test_decode_params_forwarded(self):
        seen = {}

        def handler(request):
            seen.update(json.loads(request.content))
            return httpx.Response(200, json=chat_response("Answer: A"))

        make_backend(handler).predict_with_reasoning(
            QUESTION, DecodeParams(temperature=0.3, top_p=0.9, max_tokens=64, seed=17)
        )
        assert seen["temperature"] == 0.3
        assert seen["top_p"] == 0.9
        assert seen["max_tokens"] == 64
        assert seen["seed"] == 17
        assert seen["model"] == "test-model"


class TestJustify:
    def test_thinking_channel_discarded(self):
        def handler(request):
            return httpx.Response(
                200,
                json=chat_response("because of fact X\nhence B", reasoning=SENTINEL),
            )

        guided = make_backend(handler).justify(QUESTION, Label("B"), DecodeParams())
        assert guided.provenance == Provenance.GUIDED
        assert SENTINEL not in guided.raw_text
        assert all(SENTINEL not in step for step in guided.steps)

    def test_think_tags_also_discarded(self):
        def handler(request):
            return httpx.Response(
                200, json=chat_response(f"<think>{SENTINEL}</think>visible reason")
            )

        guided = make_backend(handler).justify(QUESTION, Label("B"), DecodeParams())
        assert SENTINEL not in guided.raw_text

    def test_no_thinking_backend_same_behavior(self):
        def handler(request):
            return httpx.Response(200, json=chat_response("reason line"))

        guided = make_backend(handler, supports_thinking=False).justify(
            QUESTION, Label("B"), DecodeParams()
        )
        assert guided.steps == ("reason line",)

    def test_prompt_withholds_hint_framing(self):
        bodies = []

        def handler(request):
            bodies.append(json.loads(request.content))
            return httpx.Response(200, json=chat_response("reason"))

        make_backend(handler).justify(QUESTION, Label("B"), DecodeParams())
        prompt = bodies[0]["messages"][0]["content"]
        assert "B" in prompt
        assert "Do not mention that the answer was provided" in prompt


class TestLabelProbability:
    def test_empirical_distribution_normalizes(self):
        answers = iter(["A", "B", "B", "b)", "A", "B", "C", "B"])

        def handler(request):
            return httpx.Response(200, json=chat_response(next(answers)))

        backend = make_backend(handler, reprompt_count=8)
        trace = ReasoningTrace.from_text("some reasoning", Provenance.ZERO_SHOT)
        dist = backend.label_probability(QUESTION, trace)
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-9)
        assert dist["B"] == pytest.approx(5 / 8)  # "b)" normalizes to B
        assert dist["A"] == pytest.approx(2 / 8)
        assert all(v >= 0 for v in dist.values())

    def test_single_reprompt_is_one_hot(self):
        def handler(request):
            return httpx.Response(200, json=chat_response("C"))

        backend = make_backend(handler, reprompt_count=1)
        trace = ReasoningTrace.from_text("r", Provenance.ZERO_SHOT)
        dist = backend.label_probability(QUESTION, trace)
        assert dist == {"A": 0.0, "B": 0.0, "C": 1.0, "D": 0.0}

    def test_free_form_space_unsupported(self):
        def handler(request):
            return httpx.Response(200, json=chat_response("x"))

        backend = make_backend(handler, label_space=LabelSpace.free_form())
        trace = ReasoningTrace.from_text("r", Provenance.ZERO_SHOT)
        with pytest.raises(UnsupportedOperationError):
            backend.label_probability(QUESTION, trace)


class TestRetries:
    def test_timeout_surfaces_attempt_count(self):
        calls = []

        def handler(request):
            calls.append(1)
            raise httpx.ConnectTimeout("boom")

        backend = make_backend(handler, retries=3)
        with pytest.raises(TransportError) as err:
            backend.predict_with_reasoning(QUESTION, DecodeParams())
        assert err.value.attempts == 3
        assert len(calls) == 3
        assert "3 attempts" in str(err.value)

    def test_retryable_status_then_success(self):
        state = {"n": 0}

        def handler(request):
            state["n"] += 1
            if state["n"] < 3:
                return httpx.Response(429, text="slow down")
            return httpx.Response(200, json=chat_response("Answer: A"))

        trace, label = make_backend(handler, retries=3).predict_with_reasoning(
            QUESTION, DecodeParams()
        )
        assert label == Label("A")
        assert state["n"] == 3

    def test_non_retryable_status_fails_fast(self):
        state = {"n": 0}

        def handler(request):
            state["n"] += 1
            return httpx.Response(401, text="bad key")

        with pytest.raises(TransportError):
            make_backend(handler, retries=3).predict_with_reasoning(QUESTION, DecodeParams())
        assert state["n"] == 1


class TestTokenBucket:
    def test_burst_then_throttle(self):
        timeline = {"now": 0.0}
        sleeps = []

        def clock():
            return timeline["now"]

        def sleep(s):
            sleeps.append(s)
            timeline["now"] += s

        bucket = TokenBucket(rate=2.0, capacity=2.0, clock=clock, sleep=sleep)
        bucket.acquire()
        bucket.acquire()
        bucket.acquire()  # exhausted: must wait 0.5s for one token at 2/s
        assert sleeps and sleeps[0] == pytest.approx(0.5)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            TokenBucket(rate=0.0)


class TestTraceSerialization:
    def test_round_trip(self):
        trace = ReasoningTrace.from_text(
            "a\nb", Provenance.GUIDED, predicted_label=Label("B"), logprob=-1.5
        )
        assert trace_from_record(trace_to_record(trace)) == trace

    def test_rejects_empty_trace(self):
        with pytest.raises(DecodeError):
            ReasoningTrace.from_text("", Provenance.ZERO_SHOT)


class TestArgmaxLabel:
    def test_ties_break_to_declared_order(self):
        dist = {"A": 0.4, "B": 0.4, "C": 0.2}
        assert argmax_label(dist, ["A", "B", "C"]) == Label("A")
        assert argmax_label(dist, ["B", "A", "C"]) == Label("B")
