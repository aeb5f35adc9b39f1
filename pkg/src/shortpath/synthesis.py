"""Stage B: mine majority pivots, consolidate the pool, verify the rewrite.

The verifier receives every successful trace inside a fixed consolidation
prompt and must answer with a list of shared decision pivots followed by one
refined reasoning. The refined trace is accepted only if the reasoner's
label distribution conditioned on it puts its argmax on the gold label;
otherwise the stage falls back to the pool trace with the highest gold-label
probability. No unverified synthesized trace ever leaves this stage.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .backends.base import (
    Backend,
    DecodeParams,
    Provenance,
    ReasoningTrace,
    argmax_label,
    trace_from_record,
    trace_to_record,
)
from .corpus import Example, LabelSpace, normalize_pivot
from .errors import CorpusError, PipelineError
from .jsonl import read_jsonl, write_jsonl, write_schema_sidecar

SPR_SCHEMA = "spr/v1"

PivotExtractor = Callable[[ReasoningTrace], Iterable[str]]

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")

CONSOLIDATION_TEMPLATE = """You are an expert analyst. You will be given several correct reasoning paths. Rewrite a refined reasoning that focuses on shared key information/keywords.

I have the following reasoning paths:
{reasonings}

Begin by providing a list of shared decision pivots. Only include the decision pivots when they are visited by the majority of the provided reasoning paths in the candidate pool.

Then, aggregate the multiple reasoning paths and provide a single refined reasoning that:

1) focuses on the decision pivots (keywords/key information) that are shared across the candidate paths
2) Avoids repetition"""


@dataclass(frozen=True)
class PivotSet:
    """Mined pivot strings with their support counts over the source pool.

    The majority view keeps a pivot iff strictly more than half of the
    ``source_size`` traces mention it.
    """

    pivots: tuple[tuple[str, int], ...]
    source_size: int

    def __post_init__(self) -> None:
        for pivot, support in self.pivots:
            if not (1 <= support <= self.source_size):
                raise ValueError(f"support for {pivot!r} outside [1, {self.source_size}]")

    @property
    def majority(self) -> tuple[str, ...]:
        return tuple(p for p, c in self.pivots if c > self.source_size / 2)

    def support_of(self, pivot: str) -> int:
        for p, c in self.pivots:
            if p == pivot:
                return c
        return 0


@dataclass(frozen=True)
class ShortPath:
    """Stage-B output: the consolidated trace plus its verification verdict."""

    example_id: str
    trace: ReasoningTrace
    shared_pivots: PivotSet
    check_passed: bool
    fallback_used: bool
    verifier_id: str
    verifier_pivots: tuple[str, ...] = ()


def step_pivot_extractor(trace: ReasoningTrace) -> Iterable[str]:
    """Simulator extractor: the interior nodes a walk visited."""
    return trace.steps[1:-1]


class LlmPivotExtractor:
    """Keyphrase extraction through a backend's consolidation-free chat call."""

    PROMPT = (
        "List the decision pivots (the key facts or key logic the conclusion depends on) "
        "in the reasoning below. Reply with one pivot per line, nothing else.\n\n{reasoning}"
    )

    def __init__(self, backend, decode: DecodeParams | None = None):
        self.backend = backend
        self.decode = decode or DecodeParams(temperature=0.0, max_tokens=256)

    def __call__(self, trace: ReasoningTrace) -> Iterable[str]:
        channels = self.backend.chat(
            [{"role": "user", "content": self.PROMPT.format(reasoning=trace.raw_text)}],
            self.decode,
        )
        return [line for line in channels.output.splitlines() if line.strip()]


def mine_pivots(rplus: Sequence[ReasoningTrace], extractor: PivotExtractor) -> PivotSet:
    """Union per-trace pivot mentions with support counts.

    Mentions are normalized and deduplicated within each trace before
    counting, so support is the number of traces touching the pivot.
    """
    if not rplus:
        raise ValueError("cannot mine pivots from an empty successful subset")
    counts: dict[str, int] = {}
    for trace in rplus:
        mentions = {normalize_pivot(p) for p in extractor(trace)}
        mentions.discard("")
        for pivot in mentions:
            counts[pivot] = counts.get(pivot, 0) + 1
    ordered = tuple(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
    return PivotSet(pivots=ordered, source_size=len(rplus))


def build_consolidation_prompt(rplus: Sequence[ReasoningTrace]) -> str:
    """Render the fixed consolidation template over the successful traces.

    Deterministic: only the trace texts vary, substituted as numbered
    ``Reasoning {i}: {text}`` lines.
    """
    if not rplus:
        raise ValueError("consolidation needs at least one reasoning path")
    reasonings = "\n".join(
        f"Reasoning {i + 1}: {trace.raw_text}" for i, trace in enumerate(rplus)
    )
    return CONSOLIDATION_TEMPLATE.format(reasonings=reasonings)


def parse_verifier_output(text: str) -> tuple[tuple[str, ...], str]:
    """Split verifier output into (claimed pivots, refined reasoning text).

    Expects a leading bulleted or numbered pivot block (one optional header
    line ending in ':' is tolerated) and treats the remainder as the trace.
    Anything else falls back to the whole output as the trace with no pivots.
    """
    lines = text.splitlines()
    pivots: list[str] = []
    i = 0
    while i < len(lines) and not lines[i].strip():
        i += 1
    if i < len(lines) and lines[i].strip().endswith(":") and not _BULLET.match(lines[i]):
        if i + 1 < len(lines) and _BULLET.match(lines[i + 1]):
            i += 1
    while i < len(lines):
        match = _BULLET.match(lines[i])
        if not match:
            break
        pivots.append(match.group(1))
        i += 1
    if not pivots:
        return (), text.strip()
    remainder = "\n".join(lines[i:]).strip()
    return tuple(pivots), remainder


@dataclass(frozen=True)
class SynthesisConfig:
    extractor: PivotExtractor = step_pivot_extractor
    verifier_decode: DecodeParams = field(default_factory=DecodeParams)


def synthesize_spr(
    reasoner_backend: Backend,
    verifier_backend: Backend,
    x: Example,
    rplus: Sequence[ReasoningTrace],
    cfg: SynthesisConfig,
    label_space: LabelSpace | None = None,
) -> ShortPath:
    """Consolidate the successful subset into one verified short path.

    A verifier transport failure or a failed correctness check never aborts
    the example: the fallback picks the pool trace maximizing the reasoner's
    gold-label probability (ties to the lowest pool index).
    """
    if not rplus:
        raise ValueError("synthesize_spr needs a non-empty successful subset")
    space = label_space if label_space is not None else getattr(reasoner_backend, "label_space")
    options = space.options or ()

    pivot_set = mine_pivots(rplus, cfg.extractor)
    prompt = build_consolidation_prompt(rplus)

    candidate: ReasoningTrace | None = None
    claimed: tuple[str, ...] = ()
    try:
        channels = verifier_backend.consolidate(x, rplus, prompt, cfg.verifier_decode)
        claimed, trace_text = parse_verifier_output(channels.output)
        if trace_text:
            candidate = ReasoningTrace.from_text(trace_text, Provenance.SYNTHESIZED)
    except PipelineError:
        candidate = None

    if candidate is not None and options:
        try:
            dist = reasoner_backend.label_probability(x, candidate)
            if argmax_label(dist, options) == x.gold_label:
                return ShortPath(
                    example_id=x.id,
                    trace=candidate,
                    shared_pivots=pivot_set,
                    check_passed=True,
                    fallback_used=False,
                    verifier_id=verifier_backend.backend_id,
                    verifier_pivots=claimed,
                )
        except PipelineError:
            pass

    best_index = 0
    best_prob = -1.0
    for i, trace in enumerate(rplus):
        try:
            prob = reasoner_backend.label_probability(x, trace).get(x.gold_label.value, 0.0)
        except PipelineError:
            prob = 0.0
        if prob > best_prob:
            best_prob, best_index = prob, i
    return ShortPath(
        example_id=x.id,
        trace=rplus[best_index],
        shared_pivots=pivot_set,
        check_passed=False,
        fallback_used=True,
        verifier_id=verifier_backend.backend_id,
        verifier_pivots=claimed,
    )


def _spr_to_record(spr: ShortPath) -> dict[str, Any]:
    return {
        "example_id": spr.example_id,
        "pivots": [[p, c] for p, c in spr.shared_pivots.pivots],
        "pool_size": spr.shared_pivots.source_size,
        "trace": trace_to_record(spr.trace),
        "check_passed": spr.check_passed,
        "fallback_used": spr.fallback_used,
        "verifier_id": spr.verifier_id,
        "verifier_pivots": list(spr.verifier_pivots),
    }


def _record_to_spr(record: dict[str, Any], lineno: int, path: str | Path) -> ShortPath:
    try:
        return ShortPath(
            example_id=record["example_id"],
            trace=trace_from_record(record["trace"]),
            shared_pivots=PivotSet(
                pivots=tuple((p, int(c)) for p, c in record["pivots"]),
                source_size=int(record["pool_size"]),
            ),
            check_passed=bool(record["check_passed"]),
            fallback_used=bool(record["fallback_used"]),
            verifier_id=record["verifier_id"],
            verifier_pivots=tuple(record.get("verifier_pivots", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"{path}: line {lineno}: malformed short-path record: {exc}") from exc


def save_sprs(sprs: Sequence[ShortPath], path: str | Path) -> None:
    write_jsonl(path, (_spr_to_record(s) for s in sprs))
    write_schema_sidecar(path, SPR_SCHEMA)


def load_sprs(path: str | Path) -> list[ShortPath]:
    return [_record_to_spr(rec, lineno, path) for lineno, rec in read_jsonl(path)]
