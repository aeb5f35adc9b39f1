"""Running against a live OpenAI-compatible endpoint
=====================================================

The same three stages run unchanged against any chat-completions endpoint.
Set SHORTPATH_BASE_URL and SHORTPATH_MODEL (and an API key in
OPENAI_API_KEY) to try it; the script exits politely otherwise.

For a full live loop with per-round fine-tuning, pair this with the
trainer-bridge package: the loop exports pref/v1 pairs, writes a job
directory, and polls the bridge's handshake file for the tuned model id.
"""

import os
import sys

import numpy as np

from shortpath import BootstrapConfig, LabelSpace, OpenAICompatBackend, collect_pool, pool_to_Rplus
from shortpath.backends import TokenBucket
from shortpath.corpus import Example, Label
from shortpath.synthesis import SynthesisConfig, synthesize_spr

base_url = os.environ.get("SHORTPATH_BASE_URL")
model = os.environ.get("SHORTPATH_MODEL")
if not base_url or not model:
    print("set SHORTPATH_BASE_URL and SHORTPATH_MODEL to run this demo")
    sys.exit(0)

space = LabelSpace.mcq(["A", "B", "C", "D"])
backend = OpenAICompatBackend(
    base_url=base_url,
    model=model,
    label_space=space,
    rate_limiter=TokenBucket(rate=2.0, capacity=4.0),  # 2 requests/second
)

example = Example(
    id="demo-1",
    question=(
        "A train leaves at 9:00 and arrives at 11:30 after one 20-minute stop. "
        "How long was it moving?\nA) 2h10m  B) 2h30m  C) 1h50m  D) 2h50m"
    ),
    gold_label=Label("A"),
)

pool = collect_pool(backend, example, BootstrapConfig(pool_size=3), np.random.default_rng(0))
rplus = pool_to_Rplus(pool)
print(f"pool: {len(pool.samples)} samples, {len(rplus)} successful")
if rplus:
    spr = synthesize_spr(backend, backend, example, rplus, SynthesisConfig())
    print(f"short path (check passed: {spr.check_passed}):\n{spr.trace.raw_text}")
