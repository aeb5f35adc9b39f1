"""Stage A: build the per-example candidate pool and its successful subset.

For each example we draw ``pool_size`` zero-shot samples and mark as
successful the ones whose normalized prediction equals the gold label. If
none succeed, a bounded number of guided calls asks the backend to justify
the gold label; each admitted guided trace joins the successful subset
directly (it rationalizes the gold label by construction; set
``verify_guided`` to re-check it against the backend's label distribution).
Guided traces never occupy zero-shot slots, so the zero-shot sample
statistics stay intact.

Pools for different examples may be built in parallel; all calls for one
example are sequential because the guided fallback depends on the zero-shot
outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .backends.base import (
    Backend,
    DecodeParams,
    ReasoningTrace,
    argmax_label,
    trace_from_record,
    trace_to_record,
)
from .corpus import Example, Label, LabelSpace, labels_match
from .errors import CorpusError, DecodeError, TransportError
from .jsonl import read_jsonl, write_jsonl, write_schema_sidecar

POOL_SCHEMA = "pool/v1"


@dataclass(frozen=True)
class BootstrapConfig:
    """Stage-A knobs. ``guided_budget`` defaults to twice the pool size."""

    pool_size: int = 7
    guided_budget: int | None = None
    zero_shot_decode: DecodeParams = field(default_factory=DecodeParams)
    guided_decode: DecodeParams = field(default_factory=DecodeParams)
    verify_guided: bool = False

    def __post_init__(self) -> None:
        if self.pool_size < 1:
            raise ValueError("pool_size must be at least 1")
        if self.guided_budget is not None and self.guided_budget < 0:
            raise ValueError("guided_budget cannot be negative")

    @property
    def resolved_guided_budget(self) -> int:
        return 2 * self.pool_size if self.guided_budget is None else self.guided_budget


# The two documented operating points: a 7-sample pool (accuracy/compute
# sweet spot) and the 5-sample pool used for single-loop evaluation runs.
PRESETS = {
    "default": BootstrapConfig(pool_size=7),
    "small-pool": BootstrapConfig(pool_size=5),
}


@dataclass
class CandidatePool:
    """The zero-shot samples, admitted guided traces, and success bookkeeping.

    ``successful`` indexes into ``samples`` (zero-shot slots only); guided
    traces live in ``guided`` and are part of the successful subset by
    construction. ``attempts`` counts every generation call made.
    """

    example_id: str
    samples: list[tuple[ReasoningTrace, Label | None]]
    guided: list[ReasoningTrace]
    successful: list[int]
    attempts: int
    failure: str | None = None

    @property
    def has_signal(self) -> bool:
        return bool(self.successful or self.guided)


def collect_pool(
    backend: Backend,
    example: Example,
    cfg: BootstrapConfig,
    rng: np.random.Generator,
    label_space: LabelSpace | None = None,
) -> CandidatePool:
    """Run Stage A for one example.

    ``rng`` seeds each backend call, so a fixed generator state reproduces
    the pool bit for bit on the simulator. Transport failures beyond the
    backend's retry budget mark the pool failed instead of raising.
    """
    space = label_space if label_space is not None else getattr(backend, "label_space")
    samples: list[tuple[ReasoningTrace, Label | None]] = []
    guided: list[ReasoningTrace] = []
    successful: list[int] = []
    attempts = 0

    def next_seed() -> int:
        return int(rng.integers(0, 2**63 - 1))

    for k in range(cfg.pool_size):
        decode = cfg.zero_shot_decode.with_seed(next_seed())
        attempts += 1
        try:
            trace, predicted = backend.predict_with_reasoning(example, decode)
        except TransportError as exc:
            return CandidatePool(
                example.id, samples, guided, successful, attempts, failure=str(exc)
            )
        except DecodeError:
            continue
        samples.append((trace, predicted))
        if labels_match(predicted, example.gold_label, space):
            successful.append(len(samples) - 1)

    if not successful:
        for _ in range(cfg.resolved_guided_budget):
            decode = cfg.guided_decode.with_seed(next_seed())
            attempts += 1
            try:
                trace = backend.justify(example, example.gold_label, decode)
            except TransportError as exc:
                return CandidatePool(
                    example.id, samples, guided, successful, attempts, failure=str(exc)
                )
            except DecodeError:
                continue
            if cfg.verify_guided and not _passes_label_check(backend, example, trace, space):
                continue
            guided.append(trace)
            break

    return CandidatePool(example.id, samples, guided, successful, attempts)


def _passes_label_check(
    backend: Backend, example: Example, trace: ReasoningTrace, space: LabelSpace
) -> bool:
    options = space.options
    if options is None:
        return True
    dist = backend.label_probability(example, trace)
    return argmax_label(dist, options) == example.gold_label


def pool_to_Rplus(pool: CandidatePool) -> list[ReasoningTrace]:
    """The successful subset: gold-matching zero-shot traces (pool order),
    then any admitted guided traces."""
    zero_shot = [pool.samples[i][0] for i in pool.successful]
    return zero_shot + list(pool.guided)


def _pool_to_record(pool: CandidatePool) -> dict[str, Any]:
    return {
        "example_id": pool.example_id,
        "samples": [
            {**trace_to_record(t), "predicted": p.value if p else None}
            for t, p in pool.samples
        ],
        "guided": [trace_to_record(t) for t in pool.guided],
        "successful": list(pool.successful),
        "attempts": pool.attempts,
        "failure": pool.failure,
    }


def _record_to_pool(record: dict[str, Any], lineno: int, path: str | Path) -> CandidatePool:
    try:
        samples = [
            (trace_from_record(s), Label(s["predicted"]) if s.get("predicted") else None)
            for s in record["samples"]
        ]
        return CandidatePool(
            example_id=record["example_id"],
            samples=samples,
            guided=[trace_from_record(t) for t in record["guided"]],
            successful=[int(i) for i in record["successful"]],
            attempts=int(record["attempts"]),
            failure=record.get("failure"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorpusError(f"{path}: line {lineno}: malformed pool record: {exc}") from exc


def save_pools(pools: Sequence[CandidatePool], path: str | Path) -> None:
    write_jsonl(path, (_pool_to_record(p) for p in pools))
    write_schema_sidecar(path, POOL_SCHEMA)


def load_pools(path: str | Path) -> list[CandidatePool]:
    return [_record_to_pool(rec, lineno, path) for lineno, rec in read_jsonl(path)]
