"""Stage C: preference pairs, the DPO objective, and its exact toy gradient.

Each example contributes one pair per successful trace that is not the short
path itself (set difference by exact trace text). The loss over a pair set is

    sum over pairs of  -log sigmoid(beta * [(lp_c - lp_r) - (lq_c - lq_r)])

where ``lp``/``lq`` are chosen/rejected log-probabilities under the policy
and the frozen reference. Log-sigmoid is computed as ``-softplus(-m)`` so
large margins cannot overflow. For the simulator's walk policy the gradient
with respect to every edge logit is computed in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .backends.base import ReasoningTrace, trace_from_record, trace_to_record
from .corpus import Example
from .errors import CorpusError
from .jsonl import read_jsonl, write_jsonl, write_schema_sidecar
from .simulator import Edge, PivotWorld, ToyPolicy, trace_logprob, trace_logprob_grad
from .synthesis import ShortPath

PREF_SCHEMA = "pref/v1"

PairLogProb = Callable[["PreferencePair"], tuple[float, float]]


@dataclass(frozen=True)
class PreferencePair:
    """A chosen/rejected trace pair for one example.

    ``prompt`` is the bare question; ``prompt_labeled`` additionally embeds
    the gold label (the training-time conditional is label-conditioned, so
    both forms are exported and the trainer picks one).
    """

    example_id: str
    chosen: ReasoningTrace
    rejected: ReasoningTrace
    prompt: str = ""
    prompt_labeled: str = ""

    def __post_init__(self) -> None:
        if self.chosen.raw_text == self.rejected.raw_text:
            raise ValueError("chosen and rejected must be distinct traces")


@dataclass(frozen=True)
class DpoConfig:
    beta: float = 0.1
    lr: float = 1e-06
    epochs: int = 3
    batch_size: int = 8

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")


def build_pairs(
    spr: ShortPath, rplus: Sequence[ReasoningTrace], example: Example | None = None
) -> list[PreferencePair]:
    """One pair per successful trace distinct from the short path (pool order)."""
    prompt = example.question if example is not None else ""
    prompt_labeled = (
        f"{example.question}\n\nThe correct answer is: {example.gold_label.value}"
        if example is not None
        else ""
    )
    pairs = []
    for trace in rplus:
        if trace.raw_text == spr.trace.raw_text:
            continue
        pairs.append(
            PreferencePair(
                example_id=spr.example_id,
                chosen=spr.trace,
                rejected=trace,
                prompt=prompt,
                prompt_labeled=prompt_labeled,
            )
        )
    return pairs


def softplus(x: float) -> float:
    """Stable softplus; ``softplus(-m)`` is ``-log sigmoid(m)``."""
    if x >= 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def pair_margin(
    pair: PreferencePair, logp_policy: PairLogProb, logp_ref: PairLogProb
) -> float:
    pc, pr = logp_policy(pair)
    rc, rr = logp_ref(pair)
    values = (pc, pr, rc, rr)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"non-finite log-probability in pair {pair.example_id!r}: {values}")
    return (pc - pr) - (rc - rr)


def dpo_terms(
    pairs: Sequence[PreferencePair],
    logp_policy: PairLogProb,
    logp_ref: PairLogProb,
    beta: float,
) -> list[float]:
    """Per-pair loss terms; each lies in (0, inf) and equals ln 2 at zero margin."""
    return [softplus(-beta * pair_margin(p, logp_policy, logp_ref)) for p in pairs]


def dpo_loss(
    pairs: Sequence[PreferencePair],
    logp_policy: PairLogProb,
    logp_ref: PairLogProb,
    beta: float,
) -> float:
    return math.fsum(dpo_terms(pairs, logp_policy, logp_ref, beta))


def toy_logprob_fn(policy: ToyPolicy, world: PivotWorld) -> PairLogProb:
    def fn(pair: PreferencePair) -> tuple[float, float]:
        return (
            trace_logprob(policy, world, pair.chosen),
            trace_logprob(policy, world, pair.rejected),
        )

    return fn


def dpo_loss_toy(
    policy: ToyPolicy,
    ref: ToyPolicy,
    world: PivotWorld,
    pairs: Sequence[PreferencePair],
    beta: float,
) -> float:
    return dpo_loss(pairs, toy_logprob_fn(policy, world), toy_logprob_fn(ref, world), beta)


def dpo_grad_toy(
    policy: ToyPolicy,
    ref: ToyPolicy,
    world: PivotWorld,
    pairs: Sequence[PreferencePair],
    beta: float,
) -> dict[Edge, float]:
    """Exact gradient of the pair-set loss with respect to the policy's edge
    logits; the reference policy is held fixed."""
    grad = {e: 0.0 for e in world.edges}
    policy_fn = toy_logprob_fn(policy, world)
    ref_fn = toy_logprob_fn(ref, world)
    for pair in pairs:
        margin = pair_margin(pair, policy_fn, ref_fn)
        # d/dm of softplus(-beta*m) = -beta * sigmoid(-beta*m)
        coeff = -beta * (1.0 / (1.0 + math.exp(beta * margin)))
        g_chosen = trace_logprob_grad(policy, world, pair.chosen)
        g_rejected = trace_logprob_grad(policy, world, pair.rejected)
        for e in grad:
            grad[e] += coeff * (g_chosen[e] - g_rejected[e])
    return grad


def _pair_to_record(pair: PreferencePair) -> dict[str, Any]:
    return {
        "id": pair.example_id,
        "prompt": pair.prompt,
        "prompt_labeled": pair.prompt_labeled,
        "chosen": pair.chosen.raw_text,
        "rejected": pair.rejected.raw_text,
    }


def export_preferences(pairs: Sequence[PreferencePair], path: str | Path) -> None:
    """Write ``pref/v1`` JSONL: deterministic order, fixed key order."""
    write_jsonl(path, (_pair_to_record(p) for p in pairs))
    write_schema_sidecar(path, PREF_SCHEMA)


def load_preferences(path: str | Path) -> list[dict[str, Any]]:
    """Read and validate ``pref/v1`` records (text-level view, not traces)."""
    records = []
    for lineno, rec in read_jsonl(path):
        for key in ("id", "prompt", "chosen", "rejected"):
            if key not in rec or not isinstance(rec[key], str):
                raise CorpusError(f"{path}: line {lineno}: missing or non-string {key!r}")
        if rec["chosen"] == rec["rejected"]:
            raise CorpusError(f"{path}: line {lineno}: chosen equals rejected")
        records.append(rec)
    return records


# Rich internal pair format, used between the `pairs` and `export` stages.
PAIRS_SCHEMA = "pairs/v1"


def save_pairs(pairs: Sequence[PreferencePair], path: str | Path) -> None:
    records = (
        {
            "example_id": p.example_id,
            "prompt": p.prompt,
            "prompt_labeled": p.prompt_labeled,
            "chosen": trace_to_record(p.chosen),
            "rejected": trace_to_record(p.rejected),
        }
        for p in pairs
    )
    write_jsonl(path, records)
    write_schema_sidecar(path, PAIRS_SCHEMA)


def load_pairs(path: str | Path) -> list[PreferencePair]:
    pairs = []
    for lineno, rec in read_jsonl(path):
        try:
            pairs.append(
                PreferencePair(
                    example_id=rec["example_id"],
                    chosen=trace_from_record(rec["chosen"]),
                    rejected=trace_from_record(rec["rejected"]),
                    prompt=rec.get("prompt", ""),
                    prompt_labeled=rec.get("prompt_labeled", ""),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"{path}: line {lineno}: malformed pair record: {exc}") from exc
    return pairs
