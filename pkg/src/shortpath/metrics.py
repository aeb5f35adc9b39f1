"""Evaluation suite: pivot-F1, retrieval rate, accuracy, output length.

The retrieval report carries two distinct statistics and labels them apart:
the per-trace rate (fraction of all sampled traces that mention every
annotated pivot) and the any-of-Q rate (fraction of examples where at least
one of the Q samples does). The per-trace rate is Q-invariant in
expectation; the any-of-Q rate dominates it and grows with Q.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .backends.base import Backend, DecodeParams, ReasoningTrace
from .bootstrap import CandidatePool, pool_to_Rplus
from .corpus import Dataset, labels_match, normalize_pivot, normalize_pivot_set
from .errors import CorpusError
from .jsonl import write_jsonl, write_schema_sidecar
from .preference import PreferencePair
from .synthesis import PivotExtractor, ShortPath, step_pivot_extractor

REPORT_SCHEMA = "report/v1"

PivotMatcher = Callable[[ReasoningTrace, frozenset[str]], bool]


@dataclass(frozen=True)
class PivotScore:
    """F1 overlap between two pivot sets, with its audit components."""

    value: float
    numerator: float
    denominator: float
    epsilon: float


@dataclass(frozen=True)
class RetrievalReport:
    samples_per_prompt: int
    hits: dict[str, int]
    per_trace_rate: float
    any_rate: float


@dataclass(frozen=True)
class LengthReport:
    mean_tokens: float
    by_provenance: dict[str, float] = field(default_factory=dict)


def pivot_f1(
    p_r: Iterable[str], p_star: Iterable[str], epsilon: float = 1e-8
) -> PivotScore:
    """``2|A∩B| / (|A| + |B| + eps)`` over normalized pivot sets."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    a = set(p_r)
    b = set(p_star)
    numerator = 2.0 * len(a & b)
    denominator = len(a) + len(b) + epsilon
    return PivotScore(
        value=numerator / denominator,
        numerator=numerator,
        denominator=denominator,
        epsilon=epsilon,
    )


def substring_matcher(trace: ReasoningTrace, pivots: frozenset[str]) -> bool:
    """Default pivot-mention test: normalized-substring containment of every pivot."""
    haystack = normalize_pivot(trace.raw_text)
    return all(normalize_pivot(p) in haystack for p in pivots)


def pivot_retrieval_rate(
    backend: Backend,
    annotated: Dataset,
    samples_per_prompt: int,
    matcher: PivotMatcher | None = None,
    rng: np.random.Generator | None = None,
    decode: DecodeParams | None = None,
) -> RetrievalReport:
    """Sample Q zero-shot traces per example; a hit mentions every annotated pivot."""
    if samples_per_prompt < 1:
        raise ValueError("samples_per_prompt must be at least 1")
    matcher = matcher or substring_matcher
    rng = rng if rng is not None else np.random.default_rng()
    decode = decode or DecodeParams()
    hits: dict[str, int] = {}
    any_hits = 0
    for example in annotated.examples:
        if not example.pivot_annotations:
            raise CorpusError(f"example {example.id!r} lacks pivot annotations")
        pivots = normalize_pivot_set(example.pivot_annotations)
        count = 0
        for _ in range(samples_per_prompt):
            seeded = decode.with_seed(int(rng.integers(0, 2**63 - 1)))
            trace, _ = backend.predict_with_reasoning(example, seeded)
            count += matcher(trace, pivots)
        hits[example.id] = count
        any_hits += count > 0
    total = samples_per_prompt * len(annotated.examples)
    return RetrievalReport(
        samples_per_prompt=samples_per_prompt,
        hits=hits,
        per_trace_rate=sum(hits.values()) / total,
        any_rate=any_hits / len(annotated.examples),
    )


def accuracy(
    backend: Backend,
    testset: Dataset,
    decode: DecodeParams | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Fraction of examples whose zero-shot prediction matches gold."""
    if not testset.examples:
        raise ValueError("accuracy needs a non-empty test set")
    decode = decode or DecodeParams()
    rng = rng if rng is not None else np.random.default_rng()
    correct = 0
    for example in testset.examples:
        seeded = decode.with_seed(int(rng.integers(0, 2**63 - 1)))
        _, predicted = backend.predict_with_reasoning(example, seeded)
        correct += labels_match(predicted, example.gold_label, testset.label_space)
    return correct / len(testset.examples)


def mean_output_length(traces: Sequence[ReasoningTrace]) -> LengthReport:
    """Arithmetic mean of whitespace token counts, with a per-provenance split."""
    if not traces:
        raise ValueError("mean_output_length needs at least one trace")
    by_prov: dict[str, list[int]] = {}
    for trace in traces:
        by_prov.setdefault(trace.provenance.value, []).append(trace.token_count)
    return LengthReport(
        mean_tokens=sum(t.token_count for t in traces) / len(traces),
        by_provenance={k: sum(v) / len(v) for k, v in sorted(by_prov.items())},
    )


def select_pairs_by_score(
    pool: CandidatePool,
    spr: ShortPath,
    scores: dict[int, float] | None,
    mode: str = "pivot_only",
    extractor: PivotExtractor = step_pivot_extractor,
    epsilon: float = 1e-8,
) -> list[PreferencePair]:
    """Pick a (top, bottom) pair from the successful subset by score.

    ``scores`` maps successful-subset index to an external chain-quality
    score (opaque reals). Modes: ``pivot_only`` ranks by F1 overlap with the
    short path's majority pivots, ``external_only`` by the external score,
    ``combined`` by the rank-average of both. Ties resolve toward lower pool
    indices; fewer than two successful traces yield an empty selection.
    """
    rplus = pool_to_Rplus(pool)
    if len(rplus) < 2:
        return []
    reference = set(spr.shared_pivots.majority)
    pivot_scores = np.array(
        [
            pivot_f1(normalize_pivot_set(extractor(t)), reference, epsilon).value
            for t in rplus
        ]
    )
    if mode in ("external_only", "combined"):
        if scores is None:
            raise ValueError(f"mode {mode!r} needs external scores")
        missing = [i for i in range(len(rplus)) if i not in scores]
        if missing:
            raise ValueError(f"external scores missing for successful indices {missing}")
        external = np.array([float(scores[i]) for i in range(len(rplus))])

    if mode == "pivot_only":
        ranking = pivot_scores
    elif mode == "external_only":
        ranking = external
    elif mode == "combined":
        ranking = (rankdata(pivot_scores) + rankdata(external)) / 2.0
    else:
        raise ValueError(f"unknown selection mode {mode!r}")

    top = int(np.argmax(ranking))  # argmax keeps the lowest index on ties
    remaining = [
        i for i in range(len(rplus)) if rplus[i].raw_text != rplus[top].raw_text
    ]
    if not remaining:
        return []
    bottom = min(remaining, key=lambda i: (ranking[i], i))
    return [
        PreferencePair(
            example_id=pool.example_id, chosen=rplus[top], rejected=rplus[bottom]
        )
    ]


def write_report(records: Sequence[dict[str, Any]], path: str | Path) -> None:
    write_jsonl(path, records)
    write_schema_sidecar(path, REPORT_SCHEMA)


def format_table(rows: Sequence[dict[str, Any]], columns: Sequence[str]) -> str:
    """Plain fixed-width table for console reports."""
    def fmt(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    widths = {c: max(len(c), *(len(fmt(r.get(c, ""))) for r in rows)) if rows else len(c) for c in columns}
    header = "  ".join(c.ljust(widths[c]) for c in columns)
    divider = "  ".join("-" * widths[c] for c in columns)
    lines = [header, divider]
    for row in rows:
        lines.append("  ".join(fmt(row.get(c, "")).ljust(widths[c]) for c in columns))
    return "\n".join(lines)
