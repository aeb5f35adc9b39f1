"""The closed self-training loop on simulated questions
========================================================

Fifty simulated questions, one round: bootstrap pools, synthesize verified
short paths, build pairs, apply DPO updates to each question's walk policy,
then evaluate on fresh samples. Training concentrates probability on the
short pivot-covering walks, so held-out accuracy rises while the mean
sampled trace gets shorter.
"""

import tempfile

from shortpath import BootstrapConfig, DpoConfig, LoopConfig, generate_worlds, run_loop
from shortpath.metrics import format_table

worlds = generate_worlds(50, seed=1000)
cfg = LoopConfig(
    rounds=1,
    seed=0,
    eval_samples=100,
    bootstrap=BootstrapConfig(pool_size=5),
    dpo=DpoConfig(beta=0.1, lr=10.0, epochs=5, batch_size=8),
)

with tempfile.TemporaryDirectory() as run_dir:
    report = run_loop(cfg, worlds, run_dir)

rows = [
    {
        "stage": "zero-shot baseline",
        "accuracy": report.baseline["accuracy"],
        "mean_tokens": report.baseline["mean_tokens"],
    }
]
for stats in report.rounds:
    rows.append(
        {
            "stage": f"after round {stats.round} ({stats.pair_count} pairs)",
            "accuracy": stats.eval["accuracy"],
            "mean_tokens": stats.eval["mean_tokens"],
        }
    )
print(format_table(rows, ["stage", "accuracy", "mean_tokens"]))

curve = report.rounds[0].train["loss_curve"]
print(f"\nper-batch mean DPO loss: {curve[0]:.4f} -> {curve[-1]:.4f} over {len(curve)} batches")
