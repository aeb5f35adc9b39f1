"""Simulated pivot worlds and walk policies
============================================

A question, at desk scale, is a small DAG: one source, one sink, and a few
interior nodes marked as decision pivots. A reasoning trace is a walk from
source to sink, and the decision rule is exact: you get the gold label if and
only if your walk visited every pivot.
"""

import numpy as np

from shortpath import ToyPolicy, decide, generate_worlds, minimal_pivot_walk, sample_trace, trace_logprob

world = generate_worlds(1, seed=7)[0]
print(f"world {world.world_id}: {len(world.nodes)} nodes, {len(world.edges)} edges")
print(f"pivots: {sorted(world.pivots)}  gold label: {world.gold_label.value}")

# A uniform policy puts equal logits on every edge; sampling walks it
# edge-by-edge through per-node softmax distributions.
policy = ToyPolicy.uniform(world)
rng = np.random.default_rng(0)
for i in range(4):
    trace = sample_trace(policy, world, rng)
    label = decide(world, trace)
    hit = "covers pivots" if world.pivots <= set(trace.steps) else "misses pivots"
    print(f"sample {i}: {' -> '.join(trace.steps)}  [{hit}, label {label.value}, "
          f"logprob {trace.logprob:.3f}]")

# The exact log-probability of a walk is the sum of its edge softmax terms.
walk = minimal_pivot_walk(world, world.pivots)
print(f"\nshortest pivot-covering walk: {' -> '.join(walk.steps)}")
print(f"its log-probability under the uniform policy: {trace_logprob(policy, world, walk):.3f}")
