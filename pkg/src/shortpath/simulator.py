"""Deterministic desk-scale testbed: pivot-annotated DAG worlds.

A question is a layered DAG with one source and one sink; its ground-truth
decision pivots are interior nodes. The reasoner is a softmax walk-policy
over edge logits, a trace is a source-to-sink walk (steps are node ids), and
the decision rule is exact: the gold label iff every pivot was visited, else
a distractor chosen by a stable hash of the missing-pivot set. Worlds are
small enough that exhaustive walk enumeration stays a practical test oracle.

Worlds and policies are value types; updates return new policies. Parallel
sampling requires independently seeded generators (pass one per call via
``DecodeParams.seed`` when going through :class:`SimBackend`).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .backends.base import (
    Backend,
    BackendCaps,
    ChannelledOutput,
    DecodeParams,
    Provenance,
    ReasoningTrace,
)
from .corpus import Dataset, Example, Label, LabelSpace
from .errors import CorpusError, UnsupportedOperationError, WalkError
from .jsonl import read_jsonl, write_jsonl, write_schema_sidecar

WORLD_SCHEMA = "world/v1"

DEFAULT_LABEL_VALUES = ("A", "B", "C", "D")

Edge = tuple[str, str]


@dataclass
class PivotWorld:
    """A solvable single-source single-sink DAG with designated pivot nodes."""

    world_id: str
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    source: str
    sink: str
    pivots: frozenset[str]
    gold_label: Label
    distractor_labels: tuple[Label, ...]

    # Derived adjacency, filled in __post_init__.
    out_edges: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)
    in_edges: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)
    topo_order: tuple[str, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise WalkError(f"world {self.world_id}: duplicate node ids")
        outs: dict[str, list[str]] = {n: [] for n in self.nodes}
        ins: dict[str, list[str]] = {n: [] for n in self.nodes}
        seen_edges: set[Edge] = set()
        for u, v in self.edges:
            if u not in node_set or v not in node_set:
                raise WalkError(f"world {self.world_id}: edge ({u}, {v}) uses unknown node")
            if u == v or (u, v) in seen_edges:
                raise WalkError(f"world {self.world_id}: self-loop or duplicate edge ({u}, {v})")
            seen_edges.add((u, v))
            outs[u].append(v)
            ins[v].append(u)
        self.out_edges = {n: tuple(sorted(outs[n])) for n in self.nodes}
        self.in_edges = {n: tuple(sorted(ins[n])) for n in self.nodes}

        sources = [n for n in self.nodes if not self.in_edges[n]]
        sinks = [n for n in self.nodes if not self.out_edges[n]]
        if len(sources) != 1 or sources[0] != self.source:
            raise WalkError(f"world {self.world_id}: needs exactly one source {self.source!r}")
        if len(sinks) != 1 or sinks[0] != self.sink:
            raise WalkError(f"world {self.world_id}: needs exactly one sink {self.sink!r}")

        self.topo_order = self._toposort()
        self._check_connectivity()

        # Generated worlds always carry 1..3 pivots; hand-built zero-pivot
        # worlds are allowed so the vacuous decision rule stays testable.
        interior = node_set - {self.source, self.sink}
        if not self.pivots <= interior:
            raise WalkError(
                f"world {self.world_id}: pivots must be interior nodes (never source/sink)"
            )
        if len(self.pivots) > len(self.nodes) - 2:
            raise WalkError(f"world {self.world_id}: too many pivots")
        if self.gold_label in self.distractor_labels or not self.distractor_labels:
            raise WalkError(
                f"world {self.world_id}: distractor labels must be non-empty and exclude gold"
            )
        # Solvability: some walk covers every pivot.
        minimal_pivot_walk(self, self.pivots)

    def _toposort(self) -> tuple[str, ...]:
        indegree = {n: len(self.in_edges[n]) for n in self.nodes}
        frontier = sorted(n for n, d in indegree.items() if d == 0)
        order: list[str] = []
        while frontier:
            node = frontier.pop(0)
            order.append(node)
            for succ in self.out_edges[node]:
                indegree[succ] -= 1
                if indegree[succ] == 0:
                    frontier.append(succ)
            frontier.sort()
        if len(order) != len(self.nodes):
            raise WalkError(f"world {self.world_id}: graph contains a cycle")
        return tuple(order)

    def _check_connectivity(self) -> None:
        reach = {self.source}
        for node in self.topo_order:
            if node in reach:
                reach.update(self.out_edges[node])
        coreach = {self.sink}
        for node in reversed(self.topo_order):
            if node in coreach:
                coreach.update(self.in_edges[node])
        stranded = set(self.nodes) - (reach & coreach)
        if stranded:
            raise WalkError(
                f"world {self.world_id}: nodes not on any source-to-sink walk: {sorted(stranded)}"
            )

    @property
    def label_values(self) -> tuple[str, ...]:
        return tuple(sorted({self.gold_label.value, *(d.value for d in self.distractor_labels)}))


@dataclass(frozen=True)
class ToyPolicy:
    """Differentiable softmax walk-policy: one logit per edge."""

    edge_logits: dict[Edge, float]
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @classmethod
    def uniform(cls, world: PivotWorld, temperature: float = 1.0) -> "ToyPolicy":
        return cls(edge_logits={e: 0.0 for e in world.edges}, temperature=temperature)

    def out_probs(self, world: PivotWorld, node: str) -> tuple[tuple[Edge, ...], np.ndarray]:
        """Softmax over the outgoing edges of ``node`` (sorted by target id)."""
        targets = world.out_edges[node]
        if not targets:
            return (), np.zeros(0)
        edges = tuple((node, t) for t in targets)
        z = np.array([self.edge_logits[e] for e in edges], dtype=np.float64) / self.temperature
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        return edges, p

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(edge_logits=dict(self.edge_logits), temperature=self.temperature)


def walk_steps(world: PivotWorld, trace: ReasoningTrace) -> tuple[str, ...]:
    """Validate that a trace is a source-to-sink walk of ``world``; return it."""
    steps = trace.steps
    if not steps or steps[0] != world.source or steps[-1] != world.sink:
        raise WalkError(
            f"trace is not a {world.source}->{world.sink} walk of world {world.world_id}"
        )
    for u, v in zip(steps, steps[1:]):
        if v not in world.out_edges.get(u, ()):
            raise WalkError(f"({u}, {v}) is not an edge of world {world.world_id}")
    return steps


def trace_from_walk(
    walk: Sequence[str],
    provenance: Provenance,
    predicted_label: Label | None = None,
    logprob: float | None = None,
) -> ReasoningTrace:
    walk = tuple(walk)
    return ReasoningTrace(
        steps=walk,
        raw_text="\n".join(walk),
        predicted_label=predicted_label,
        provenance=provenance,
        token_count=len(walk),
        logprob=logprob,
    )


def sample_trace(
    policy: ToyPolicy, world: PivotWorld, rng: np.random.Generator
) -> ReasoningTrace:
    """Sample a source-to-sink walk edge by edge; logprob is the exact sum."""
    node = world.source
    walk = [node]
    logprob = 0.0
    while node != world.sink:
        edges, probs = policy.out_probs(world, node)
        idx = int(rng.choice(len(edges), p=probs))
        logprob += math.log(probs[idx])
        node = edges[idx][1]
        walk.append(node)
    return trace_from_walk(walk, Provenance.ZERO_SHOT, logprob=logprob)


def decide(world: PivotWorld, trace: ReasoningTrace) -> Label:
    """Gold iff every pivot was visited; else a stable hash-picked distractor."""
    steps = walk_steps(world, trace)
    missing = sorted(world.pivots - set(steps))
    if not missing:
        return world.gold_label
    digest = hashlib.sha256(",".join(missing).encode("utf-8")).digest()
    index = int.from_bytes(digest[:8], "big") % len(world.distractor_labels)
    return world.distractor_labels[index]


def trace_logprob(policy: ToyPolicy, world: PivotWorld, trace: ReasoningTrace) -> float:
    steps = walk_steps(world, trace)
    total = 0.0
    for u, v in zip(steps, steps[1:]):
        edges, probs = policy.out_probs(world, u)
        total += math.log(probs[edges.index((u, v))])
    return total


def trace_logprob_grad(
    policy: ToyPolicy, world: PivotWorld, trace: ReasoningTrace
) -> dict[Edge, float]:
    """Gradient of ``trace_logprob`` with respect to every edge logit."""
    steps = walk_steps(world, trace)
    grad = {e: 0.0 for e in world.edges}
    for u, v in zip(steps, steps[1:]):
        edges, probs = policy.out_probs(world, u)
        for e, p in zip(edges, probs):
            indicator = 1.0 if e == (u, v) else 0.0
            grad[e] += (indicator - float(p)) / policy.temperature
    return grad


def minimal_pivot_walk(world: PivotWorld, required_pivots: Iterable[str]) -> ReasoningTrace:
    """Fewest-node source-to-sink walk covering ``required_pivots``.

    Ties break toward the lexicographically smallest node-id sequence. Raises
    :class:`WalkError` when no covering walk exists.
    """
    required = sorted(set(required_pivots))
    unknown = [p for p in required if p not in world.out_edges]
    if unknown:
        raise WalkError(f"required pivots {unknown} are not nodes of world {world.world_id}")
    bit = {p: 1 << i for i, p in enumerate(required)}
    full = (1 << len(required)) - 1

    def mask_of(node: str, mask: int) -> int:
        return mask | bit.get(node, 0)

    # best[(node, mask)] = (walk length, walk tuple), minimized lexicographically.
    best: dict[tuple[str, int], tuple[int, tuple[str, ...]]] = {}
    start_mask = mask_of(world.source, 0)
    best[(world.source, start_mask)] = (1, (world.source,))
    for node in world.topo_order:
        states = [(m, v) for (n, m), v in best.items() if n == node]
        for mask, (length, walk) in states:
            for succ in world.out_edges[node]:
                key = (succ, mask_of(succ, mask))
                cand = (length + 1, walk + (succ,))
                if key not in best or cand < best[key]:
                    best[key] = cand
    answer = best.get((world.sink, full))
    if answer is None:
        raise WalkError(
            f"world {world.world_id}: no source-to-sink walk covers {required}"
        )
    return trace_from_walk(answer[1], Provenance.SYNTHESIZED)


def enumerate_walks(world: PivotWorld) -> Iterator[tuple[str, ...]]:
    """All source-to-sink walks, in lexicographic node-id order (test oracle)."""
    stack: list[tuple[str, ...]] = [(world.source,)]
    while stack:
        walk = stack.pop()
        node = walk[-1]
        if node == world.sink:
            yield walk
            continue
        for succ in reversed(world.out_edges[node]):
            stack.append(walk + (succ,))


def walk_probability(policy: ToyPolicy, world: PivotWorld, walk: Sequence[str]) -> float:
    """Exact probability of one walk under the policy (test oracle)."""
    prob = 1.0
    for u, v in zip(walk, walk[1:]):
        edges, probs = policy.out_probs(world, u)
        prob *= float(probs[edges.index((u, v))])
    return prob


def apply_dpo_update(policy: ToyPolicy, grad: Mapping[Edge, float], lr: float) -> ToyPolicy:
    """One gradient-descent step on the edge logits; returns a new policy."""
    if set(grad.keys()) != set(policy.edge_logits.keys()):
        raise ValueError("gradient edge set does not match policy edge set")
    new_logits = {e: policy.edge_logits[e] - lr * grad[e] for e in policy.edge_logits}
    return ToyPolicy(edge_logits=new_logits, temperature=policy.temperature)


# -- world generation -------------------------------------------------------


def generate_world(
    rng: np.random.Generator,
    world_id: str = "w0000",
    node_count: int | None = None,
    pivot_count: int | None = None,
    label_values: Sequence[str] = DEFAULT_LABEL_VALUES,
) -> PivotWorld:
    """Random solvable world: ranked DAG, 6-12 nodes, 1-3 pivots.

    Edges only point to strictly higher ranks, so acyclicity is structural.
    Skip edges (added both at random and by the connectivity fix-ups) give
    walks genuinely different lengths, which the training loop needs in order
    to move mean trace length.
    """
    n = int(node_count if node_count is not None else rng.integers(6, 13))
    if n < 4:
        raise ValueError("worlds need at least 4 nodes")
    interior = n - 2
    rank_count = int(rng.integers(3, min(5, interior) + 1))
    # Partition interior nodes over ranks, each rank non-empty.
    counts = np.ones(rank_count, dtype=int)
    for _ in range(interior - rank_count):
        counts[int(rng.integers(rank_count))] += 1

    names = [f"n{i:02d}" for i in range(n)]
    source, sink = names[0], names[-1]
    rank_of: dict[str, int] = {source: 0, sink: rank_count + 1}
    ranks: list[list[str]] = [[source]] + [[] for _ in range(rank_count)] + [[sink]]
    cursor = 1
    for r in range(1, rank_count + 1):
        for _ in range(counts[r - 1]):
            node = names[cursor]
            cursor += 1
            ranks[r].append(node)
            rank_of[node] = r

    edges: set[Edge] = set()
    for r in range(rank_count + 1):
        for node in ranks[r]:
            successors = [m for rr in range(r + 1, rank_count + 2) for m in ranks[rr]]
            near = list(ranks[r + 1])
            degree = int(rng.integers(2, 4))
            for _ in range(degree):
                pool = near if (near and rng.random() < 0.7) else successors
                edges.add((node, pool[int(rng.integers(len(pool)))]))

    # Every non-source node needs an in-edge from a lower rank.
    for node in names[1:]:
        if not any(v == node for (_, v) in edges):
            lower = [m for m in names if rank_of[m] < rank_of[node]]
            edges.add((lower[int(rng.integers(len(lower)))], node))
    # Every non-sink node needs an out-edge.
    for node in names[:-1]:
        if not any(u == node for (u, _) in edges):
            higher = [m for m in names if rank_of[m] > rank_of[node]]
            edges.add((node, higher[int(rng.integers(len(higher)))]))

    # Pivots on distinct ranks, then a guaranteed chain through them.
    k = int(pivot_count if pivot_count is not None else rng.integers(1, 4))
    k = min(k, rank_count)
    pivot_ranks = sorted(rng.choice(np.arange(1, rank_count + 1), size=k, replace=False).tolist())
    pivots = [ranks[r][int(rng.integers(len(ranks[r])))] for r in pivot_ranks]
    chain = [source, *pivots, sink]
    for a, b in zip(chain, chain[1:]):
        edges.add((a, b))

    labels = [Label(v) for v in label_values]
    gold = labels[int(rng.integers(len(labels)))]
    distractors = tuple(l for l in labels if l != gold)
    return PivotWorld(
        world_id=world_id,
        nodes=tuple(names),
        edges=tuple(sorted(edges)),
        source=source,
        sink=sink,
        pivots=frozenset(pivots),
        gold_label=gold,
        distractor_labels=distractors,
    )


def generate_worlds(count: int, seed: int, **kwargs) -> list[PivotWorld]:
    streams = np.random.SeedSequence(seed).spawn(count)
    return [
        generate_world(np.random.default_rng(s), world_id=f"w{i:04d}", **kwargs)
        for i, s in enumerate(streams)
    ]


def world_to_example(world: PivotWorld) -> Example:
    return Example(
        id=world.world_id,
        question=(
            f"Walk world {world.world_id} from {world.source} to {world.sink}, "
            "visiting every decision pivot."
        ),
        gold_label=world.gold_label,
        pivot_annotations=frozenset(world.pivots),
    )


def worlds_to_dataset(worlds: Sequence[PivotWorld]) -> Dataset:
    values: list[str] = []
    for world in worlds:
        for v in world.label_values:
            if v not in values:
                values.append(v)
    return Dataset(
        label_space=LabelSpace.mcq(sorted(values)),
        examples=[world_to_example(w) for w in worlds],
    )


def save_worlds(worlds: Sequence[PivotWorld], path: str | Path) -> None:
    records = (
        {
            "id": w.world_id,
            "nodes": list(w.nodes),
            "edges": [list(e) for e in w.edges],
            "source": w.source,
            "sink": w.sink,
            "pivots": sorted(w.pivots),
            "gold": w.gold_label.value,
            "distractors": [d.value for d in w.distractor_labels],
        }
        for w in worlds
    )
    write_jsonl(path, records)
    write_schema_sidecar(path, WORLD_SCHEMA)


def load_worlds(path: str | Path) -> list[PivotWorld]:
    worlds = []
    for lineno, rec in read_jsonl(path):
        try:
            worlds.append(
                PivotWorld(
                    world_id=rec["id"],
                    nodes=tuple(rec["nodes"]),
                    edges=tuple((u, v) for u, v in rec["edges"]),
                    source=rec["source"],
                    sink=rec["sink"],
                    pivots=frozenset(rec["pivots"]),
                    gold_label=Label(rec["gold"]),
                    distractor_labels=tuple(Label(d) for d in rec["distractors"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"{path}: line {lineno}: malformed world record: {exc}") from exc
    return worlds


# -- simulator backend -------------------------------------------------------


class SimBackend(Backend):
    """Backend facade over worlds and their walk policies.

    One policy per world id; callers that replace entries in ``policies``
    (e.g. after a training update) are immediately visible to later calls.
    Stochastic calls derive their generator from ``DecodeParams.seed``, so a
    fixed seed reproduces a call bit for bit.
    """

    def __init__(
        self,
        worlds: Mapping[str, PivotWorld],
        policies: dict[str, ToyPolicy],
        label_space: LabelSpace | None = None,
        guided_max_tries: int = 64,
    ):
        self.worlds = dict(worlds)
        self.policies = policies
        if label_space is None:
            label_space = worlds_to_dataset(list(self.worlds.values())).label_space
        self.label_space = label_space
        self.guided_max_tries = guided_max_tries

    @classmethod
    def from_worlds(cls, worlds: Sequence[PivotWorld], temperature: float = 1.0) -> "SimBackend":
        index = {w.world_id: w for w in worlds}
        policies = {w.world_id: ToyPolicy.uniform(w, temperature) for w in worlds}
        return cls(index, policies)

    @property
    def backend_id(self) -> str:
        return "simulator"

    def caps(self) -> BackendCaps:
        return BackendCaps(
            supports_thinking=False,
            supports_trace_logprob=True,
            supports_conditional_label_prob=True,
        )

    def _world(self, x: Example) -> PivotWorld:
        try:
            return self.worlds[x.id]
        except KeyError:
            raise UnsupportedOperationError(f"no simulated world for example {x.id!r}") from None

    def _rng(self, decode: DecodeParams) -> np.random.Generator:
        return np.random.default_rng(decode.seed)

    def predict_with_reasoning(
        self, x: Example, decode: DecodeParams
    ) -> tuple[ReasoningTrace, Label | None]:
        world = self._world(x)
        trace = sample_trace(self.policies[world.world_id], world, self._rng(decode))
        label = decide(world, trace)
        trace = replace(trace, predicted_label=label)
        return trace, label

    def justify(self, x: Example, y: Label, decode: DecodeParams) -> ReasoningTrace:
        world = self._world(x)
        if y != world.gold_label:
            raise UnsupportedOperationError(
                "the simulator can only justify the gold label of a world"
            )
        policy = self.policies[world.world_id]
        rng = self._rng(decode)
        for _ in range(self.guided_max_tries):
            candidate = sample_trace(policy, world, rng)
            if world.pivots <= set(candidate.steps):
                return replace(candidate, provenance=Provenance.GUIDED, predicted_label=y)
        walk = minimal_pivot_walk(world, world.pivots)
        logprob = trace_logprob(policy, world, walk)
        return replace(walk, provenance=Provenance.GUIDED, predicted_label=y, logprob=logprob)

    def label_probability(self, x: Example, trace: ReasoningTrace) -> dict[str, float]:
        world = self._world(x)
        outcome = decide(world, trace)
        options = self.label_space.options or world.label_values
        return {value: (1.0 if value == outcome.value else 0.0) for value in options}

    def consolidate(
        self,
        x: Example,
        rplus: Sequence[ReasoningTrace],
        prompt: str,
        decode: DecodeParams,
    ) -> ChannelledOutput:
        """Majority-pivot consolidation: the shortest walk through every node
        visited by a strict majority of the pool, reported as a pivot list
        followed by the walk."""
        world = self._world(x)
        interior_sets = [set(t.steps) - {world.source, world.sink} for t in rplus]
        threshold = len(rplus) / 2.0
        majority = sorted(
            node
            for node in world.nodes
            if sum(node in s for s in interior_sets) > threshold
        )
        walk = minimal_pivot_walk(world, majority)
        pivot_block = "\n".join(f"- {p}" for p in majority)
        text = f"{pivot_block}\n\n" + "\n".join(walk.steps) if pivot_block else "\n".join(walk.steps)
        return ChannelledOutput(output=text, thinking=None)
