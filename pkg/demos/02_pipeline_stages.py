"""One example through all three pipeline stages
=================================================

Stage A samples a candidate pool and keeps the traces that reached the gold
label. Stage B mines the pivots a majority of them share, asks the verifier
for one consolidated short path, and checks it still yields the gold label.
Stage C turns the pool into chosen/rejected preference pairs.
"""

import numpy as np

from shortpath import BootstrapConfig, SimBackend, build_pairs, collect_pool, generate_worlds, pool_to_Rplus
from shortpath.simulator import worlds_to_dataset
from shortpath.synthesis import SynthesisConfig, build_consolidation_prompt, synthesize_spr

world = generate_worlds(1, seed=12)[0]
backend = SimBackend.from_worlds([world])
example = worlds_to_dataset([world]).examples[0]

# Stage A: five zero-shot samples; a guided call fires only if none succeed.
pool = collect_pool(backend, example, BootstrapConfig(pool_size=5), np.random.default_rng(3))
rplus = pool_to_Rplus(pool)
print(f"stage A: {len(pool.samples)} zero-shot samples, "
      f"{len(pool.successful)} successful, {len(pool.guided)} guided")

# Stage B: the consolidation prompt enumerates the successful traces.
prompt = build_consolidation_prompt(rplus)
print("\nconsolidation prompt (first 3 lines):")
print("\n".join(prompt.splitlines()[:3]))

spr = synthesize_spr(backend, backend, example, rplus, SynthesisConfig())
print(f"\nstage B: short path = {' -> '.join(spr.trace.steps)}")
print(f"majority pivots {spr.shared_pivots.majority}, "
      f"check passed: {spr.check_passed}, fallback: {spr.fallback_used}")

# Stage C: one pair per successful trace that is not the short path itself.
pairs = build_pairs(spr, rplus, example)
print(f"\nstage C: {len(pairs)} preference pairs")
for pair in pairs[:2]:
    print(f"  chosen {len(pair.chosen.steps)} steps vs rejected {len(pair.rejected.steps)} steps")
