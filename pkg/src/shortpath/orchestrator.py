"""End-to-end self-training rounds: bootstrap, synthesize, pair, train, eval.

Each round freezes a reference policy, builds candidate pools for every
example, skips examples whose successful subset is empty, synthesizes
verified short paths, accumulates preference pairs, and then either applies
minibatch DPO updates to the simulator's walk policies or exports the pairs
and waits for an external trainer through a filesystem handshake.

Every stochastic call is seeded positionally from ``(run seed, round, stage,
example index, call index)``, so a resumed run consumes exactly the same
random streams as an uninterrupted one, and two runs with the same config
produce byte-identical artifacts. Wall-clock timings are the one exception:
they go to ``timings.json``, which is documented as volatile.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .backends.base import Backend
from .bootstrap import BootstrapConfig, CandidatePool, collect_pool, load_pools, pool_to_Rplus, save_pools
from .corpus import Dataset, labels_match
from .errors import CheckpointError, ConfigError, TransportError
from .jsonl import dumps_record
from .preference import (
    DpoConfig,
    PreferencePair,
    build_pairs,
    dpo_grad_toy,
    dpo_loss_toy,
    export_preferences,
    load_pairs,
    save_pairs,
)
from .simulator import (
    PivotWorld,
    SimBackend,
    ToyPolicy,
    apply_dpo_update,
    decide,
    load_worlds,
    sample_trace,
    save_worlds,
    worlds_to_dataset,
)
from .synthesis import ShortPath, SynthesisConfig, load_sprs, save_sprs, synthesize_spr

RUN_SCHEMA = "run/v1"

STAGE_BOOTSTRAP = "bootstrap"
STAGE_SYNTHESIZE = "synthesize"
STAGE_PAIRS = "pairs"
STAGE_TRAIN = "train"
STAGE_EVALUATE = "evaluate"
ROUND_STAGES = (STAGE_BOOTSTRAP, STAGE_SYNTHESIZE, STAGE_PAIRS, STAGE_TRAIN, STAGE_EVALUATE)
_STAGE_CODE = {s: i + 1 for i, s in enumerate(ROUND_STAGES)}


@dataclass(frozen=True)
class LoopConfig:
    """Declarative run configuration; see ``configs/`` for the file schema."""

    rounds: int = 3
    seed: int = 0
    mode: str = "sim"
    eval_samples: int = 25
    workers: int = 1
    freeze_once: bool = False
    early_stop_patience: int | None = None
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    dpo: DpoConfig = field(default_factory=DpoConfig)

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ConfigError("rounds must be at least 1")
        if self.mode not in ("sim", "live"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.eval_samples < 1 or self.workers < 1:
            raise ConfigError("eval_samples and workers must be at least 1")

    def to_json(self) -> dict[str, Any]:
        record = {
            "schema": RUN_SCHEMA,
            "rounds": self.rounds,
            "seed": self.seed,
            "mode": self.mode,
            "eval_samples": self.eval_samples,
            "workers": self.workers,
            "freeze_once": self.freeze_once,
            "early_stop_patience": self.early_stop_patience,
            "bootstrap": {
                "pool_size": self.bootstrap.pool_size,
                "guided_budget": self.bootstrap.guided_budget,
                "verify_guided": self.bootstrap.verify_guided,
            },
            "dpo": asdict(self.dpo),
        }
        return record


@dataclass
class RoundStats:
    round: int
    pools: dict[str, Any]
    spr: dict[str, Any]
    pair_count: int
    train: dict[str, Any]
    eval: dict[str, Any]


@dataclass
class RunReport:
    baseline: dict[str, Any]
    rounds: list[RoundStats]
    early_stopped: bool = False
    no_signal: bool = False
    timings: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        # Timings are intentionally excluded: the serialized report must be
        # byte-identical across reruns of the same seeded config.
        return {
            "schema": "report/v1",
            "baseline": self.baseline,
            "rounds": [asdict(r) for r in self.rounds],
            "early_stopped": self.early_stopped,
            "no_signal": self.no_signal,
        }


def stage_rng(seed: int, round_no: int, stage: str, *indices: int) -> np.random.Generator:
    """Positionally derived generator; independent of execution history."""
    entropy = [seed & 0xFFFFFFFFFFFFFFFF, round_no, _STAGE_CODE[stage], *indices]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunDirectory:
    """Content-hashed stage checkpoints inside one run directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"

    def load_manifest(self) -> dict[str, Any]:
        if not self.manifest_path.exists():
            return {"schema": RUN_SCHEMA, "config_sha256": None, "stages": [], "done": False}
        try:
            return json.loads(self.manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt manifest: {exc}") from exc

    def write_manifest(self, manifest: dict[str, Any]) -> None:
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(dumps_record(manifest) + "\n")
        tmp.replace(self.manifest_path)

    def record_stage(self, round_no: int, stage: str, files: Sequence[str]) -> None:
        manifest = self.load_manifest()
        hashes = {name: _sha256(self.root / name) for name in files}
        manifest["stages"].append({"round": round_no, "stage": stage, "files": hashes})
        self.write_manifest(manifest)

    def completed(self) -> set[tuple[int, str]]:
        return {(s["round"], s["stage"]) for s in self.load_manifest()["stages"]}

    def verify(self) -> None:
        """Hash-check every recorded artifact; tampering fails validation."""
        for stage in self.load_manifest()["stages"]:
            for name, expected in stage["files"].items():
                path = self.root / name
                if not path.exists():
                    raise CheckpointError(f"checkpoint file missing: {name}")
                actual = _sha256(path)
                if actual != expected:
                    raise CheckpointError(
                        f"checkpoint hash mismatch for {name}: {actual} != {expected}"
                    )

    def mark_done(self) -> None:
        manifest = self.load_manifest()
        manifest["done"] = True
        self.write_manifest(manifest)


def save_policies(policies: dict[str, ToyPolicy], path: str | Path) -> None:
    record = {
        world_id: {
            "temperature": policy.temperature,
            "logits": [[u, v, logit] for (u, v), logit in sorted(policy.edge_logits.items())],
        }
        for world_id, policy in sorted(policies.items())
    }
    Path(path).write_text(dumps_record(record) + "\n")


def load_policies(path: str | Path) -> dict[str, ToyPolicy]:
    raw = json.loads(Path(path).read_text())
    return {
        world_id: ToyPolicy(
            edge_logits={(u, v): float(logit) for u, v, logit in entry["logits"]},
            temperature=float(entry["temperature"]),
        )
        for world_id, entry in raw.items()
    }


# -- stages -------------------------------------------------------------------


def run_bootstrap_stage(
    backend: Backend,
    dataset: Dataset,
    cfg: BootstrapConfig,
    seed: int,
    round_no: int,
    workers: int = 1,
) -> list[CandidatePool]:
    """Stage A over the whole dataset; results merge in example order."""

    def build(index: int) -> CandidatePool:
        rng = stage_rng(seed, round_no, STAGE_BOOTSTRAP, index)
        return collect_pool(backend, dataset.examples[index], cfg, rng)

    indices = range(len(dataset.examples))
    if workers <= 1:
        return [build(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(build, indices))


def run_synthesis_stage(
    reasoner: Backend,
    verifier: Backend,
    dataset: Dataset,
    pools: Sequence[CandidatePool],
    cfg: SynthesisConfig,
    seed: int,
    round_no: int,
    workers: int = 1,
) -> list[ShortPath]:
    """Stage B for every pool with signal; empty pools are skipped."""
    jobs = []
    for index, pool in enumerate(pools):
        rplus = pool_to_Rplus(pool)
        if rplus:
            jobs.append((index, pool, rplus))

    def synthesize(job):
        index, pool, rplus = job
        example = dataset.by_id(pool.example_id)
        decode = cfg.verifier_decode.with_seed(
            int(stage_rng(seed, round_no, STAGE_SYNTHESIZE, index).integers(0, 2**63 - 1))
        )
        return synthesize_spr(
            reasoner,
            verifier,
            example,
            rplus,
            SynthesisConfig(extractor=cfg.extractor, verifier_decode=decode),
        )

    if workers <= 1:
        return [synthesize(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(synthesize, jobs))


def run_pairs_stage(
    dataset: Dataset,
    pools: Sequence[CandidatePool],
    sprs: Sequence[ShortPath],
) -> list[PreferencePair]:
    by_id = {spr.example_id: spr for spr in sprs}
    pairs: list[PreferencePair] = []
    for pool in pools:
        spr = by_id.get(pool.example_id)
        if spr is None:
            continue
        rplus = pool_to_Rplus(pool)
        pairs.extend(build_pairs(spr, rplus, dataset.by_id(pool.example_id)))
    return pairs


def run_train_sim_stage(
    worlds: dict[str, PivotWorld],
    policies: dict[str, ToyPolicy],
    reference: dict[str, ToyPolicy],
    pairs: Sequence[PreferencePair],
    dpo: DpoConfig,
    seed: int,
    round_no: int,
) -> dict[str, Any]:
    """Minibatch DPO epochs on the toy policies; mutates ``policies`` in place.

    The reference mapping is read-only here and asserted unchanged, matching
    the frozen-reference contract for the duration of a round.
    """
    ref_snapshot = {wid: dict(p.edge_logits) for wid, p in reference.items()}
    rng = stage_rng(seed, round_no, STAGE_TRAIN)
    loss_curve: list[float] = []
    updates = 0
    for _ in range(dpo.epochs):
        order = rng.permutation(len(pairs)) if pairs else []
        for start in range(0, len(pairs), dpo.batch_size):
            batch = [pairs[int(i)] for i in order[start : start + dpo.batch_size]]
            by_world: dict[str, list[PreferencePair]] = {}
            for pair in batch:
                by_world.setdefault(pair.example_id, []).append(pair)
            batch_loss = 0.0
            for world_id, world_pairs in sorted(by_world.items()):
                world = worlds[world_id]
                policy = policies[world_id]
                ref = reference[world_id]
                batch_loss += dpo_loss_toy(policy, ref, world, world_pairs, dpo.beta)
                grad = dpo_grad_toy(policy, ref, world, world_pairs, dpo.beta)
                policies[world_id] = apply_dpo_update(policy, grad, dpo.lr)
                updates += 1
            loss_curve.append(batch_loss / max(len(batch), 1))
    for wid, snapshot in ref_snapshot.items():
        if reference[wid].edge_logits != snapshot:
            raise AssertionError("frozen reference mutated during a training round")
    return {"loss_curve": loss_curve, "updates": updates, "epochs": dpo.epochs}


def evaluate_sim(
    worlds: dict[str, PivotWorld],
    policies: dict[str, ToyPolicy],
    dataset: Dataset,
    eval_samples: int,
    seed: int,
    round_no: int,
) -> dict[str, Any]:
    """Held-out evaluation: fresh seeded samples from the current policies."""
    correct = 0
    total = 0
    token_counts: list[int] = []
    for index, example in enumerate(dataset.examples):
        world = worlds[example.id]
        policy = policies[example.id]
        rng = stage_rng(seed, round_no, STAGE_EVALUATE, index)
        for _ in range(eval_samples):
            trace = sample_trace(policy, world, rng)
            label = decide(world, trace)
            correct += labels_match(label, example.gold_label, dataset.label_space)
            token_counts.append(trace.token_count)
            total += 1
    return {
        "accuracy": correct / total,
        "mean_tokens": sum(token_counts) / total,
        "examples": len(dataset.examples),
        "samples_per_example": eval_samples,
    }


def _pool_stats(pools: Sequence[CandidatePool]) -> dict[str, Any]:
    return {
        "examples": len(pools),
        "with_signal": sum(p.has_signal for p in pools),
        "skipped": sum(not p.has_signal for p in pools),
        "failed": sum(p.failure is not None for p in pools),
        "attempts": sum(p.attempts for p in pools),
        "zero_shot_successes": sum(len(p.successful) for p in pools),
        "guided_admissions": sum(len(p.guided) for p in pools),
    }


def _spr_stats(sprs: Sequence[ShortPath]) -> dict[str, Any]:
    count = len(sprs)
    return {
        "count": count,
        "check_passed": sum(s.check_passed for s in sprs),
        "fallback_used": sum(s.fallback_used for s in sprs),
        "check_rate": (sum(s.check_passed for s in sprs) / count) if count else 0.0,
        "fallback_rate": (sum(s.fallback_used for s in sprs) / count) if count else 0.0,
    }


# -- the loop -----------------------------------------------------------------


class SimLoopRunner:
    """Simulation-mode driver for ``run_loop`` with stage checkpoints."""

    def __init__(
        self,
        cfg: LoopConfig,
        worlds: Sequence[PivotWorld],
        run_dir: str | Path,
        policies: dict[str, ToyPolicy] | None = None,
    ):
        self.cfg = cfg
        self.worlds = {w.world_id: w for w in worlds}
        self.dataset = worlds_to_dataset(list(worlds))
        self.run = RunDirectory(run_dir)
        self.policies = policies or {
            wid: ToyPolicy.uniform(w) for wid, w in self.worlds.items()
        }
        self.backend = SimBackend(self.worlds, self.policies, self.dataset.label_space)
        self.synthesis_cfg = SynthesisConfig()
        self.timings: dict[str, float] = {}

    # stage file naming
    @staticmethod
    def _fname(round_no: int, kind: str) -> str:
        return f"round{round_no:02d}.{kind}"

    def _write_config(self) -> None:
        config_path = self.run.root / "config.json"
        payload = dumps_record(self.cfg.to_json()) + "\n"
        if config_path.exists():
            if config_path.read_text() != payload:
                raise CheckpointError(
                    "run directory was created with a different configuration"
                )
        else:
            config_path.write_text(payload)
        worlds_path = self.run.root / "worlds.jsonl"
        if not worlds_path.exists():
            save_worlds(list(self.worlds.values()), worlds_path)
        manifest = self.run.load_manifest()
        if manifest["config_sha256"] is None:
            manifest["config_sha256"] = _sha256(config_path)
            self.run.write_manifest(manifest)
        if (0, "setup") not in self.run.completed():
            self.run.record_stage(0, "setup", ["config.json", "worlds.jsonl"])

    def _timed(self, key: str, fn: Callable[[], Any]) -> Any:
        started = time.perf_counter()
        result = fn()
        self.timings[key] = round(time.perf_counter() - started, 6)
        return result

    def execute(self, resume: bool = False) -> RunReport:
        cfg = self.cfg
        self._write_config()
        if resume:
            self.run.verify()
        completed = self.run.completed() if resume else set()
        manifest = self.run.load_manifest()
        if resume and manifest.get("done") and (self.run.root / "report.json").exists():
            return self._load_report()

        # Baseline (round 0) evaluation and initial policy snapshot.
        if (0, STAGE_EVALUATE) in completed:
            baseline = json.loads((self.run.root / self._fname(0, "eval.json")).read_text())
            self.policies.update(load_policies(self.run.root / self._fname(0, "policies.json")))
        else:
            save_policies(self.policies, self.run.root / self._fname(0, "policies.json"))
            baseline = self._timed(
                "round00.evaluate",
                lambda: evaluate_sim(
                    self.worlds, self.policies, self.dataset, cfg.eval_samples, cfg.seed, 0
                ),
            )
            (self.run.root / self._fname(0, "eval.json")).write_text(
                dumps_record(baseline) + "\n"
            )
            self.run.record_stage(
                0, STAGE_EVALUATE, [self._fname(0, "eval.json"), self._fname(0, "policies.json")]
            )

        rounds: list[RoundStats] = []
        early_stopped = False
        best_accuracy = baseline["accuracy"]
        stale_rounds = 0
        total_pairs = 0

        frozen_once_ref: dict[str, ToyPolicy] | None = None
        if cfg.freeze_once:
            frozen_once_ref = {
                wid: p.copy() for wid, p in load_policies(
                    self.run.root / self._fname(0, "policies.json")
                ).items()
            }

        for round_no in range(1, cfg.rounds + 1):
            # When resuming into a round whose training has not happened yet,
            # restore the policy state the round started from.
            prev_policy_file = self.run.root / self._fname(round_no - 1, "policies.json")
            if resume and (round_no, STAGE_TRAIN) not in completed and prev_policy_file.exists():
                self.policies.update(load_policies(prev_policy_file))

            reference = (
                frozen_once_ref
                if frozen_once_ref is not None
                else {wid: p.copy() for wid, p in self.policies.items()}
            )

            pools = self._stage_pools(round_no, completed)
            sprs = self._stage_sprs(round_no, pools, completed)
            pairs = self._stage_pairs(round_no, pools, sprs, completed)
            total_pairs += len(pairs)
            train_stats = self._stage_train(round_no, pairs, reference, completed)
            eval_stats = self._stage_eval(round_no, completed)

            rounds.append(
                RoundStats(
                    round=round_no,
                    pools=_pool_stats(pools),
                    spr=_spr_stats(sprs),
                    pair_count=len(pairs),
                    train=train_stats,
                    eval=eval_stats,
                )
            )

            if cfg.early_stop_patience is not None:
                if eval_stats["accuracy"] > best_accuracy:
                    best_accuracy = eval_stats["accuracy"]
                    stale_rounds = 0
                else:
                    stale_rounds += 1
                    if stale_rounds >= cfg.early_stop_patience:
                        early_stopped = True
                        break

        report = RunReport(
            baseline=baseline,
            rounds=rounds,
            early_stopped=early_stopped,
            no_signal=total_pairs == 0,
            timings=dict(self.timings),
        )
        (self.run.root / "report.json").write_text(dumps_record(report.to_json()) + "\n")
        (self.run.root / "timings.json").write_text(
            dumps_record({"schema": "timings/v1", **self.timings}) + "\n"
        )
        self.run.mark_done()
        return report

    def _load_report(self) -> RunReport:
        raw = json.loads((self.run.root / "report.json").read_text())
        return RunReport(
            baseline=raw["baseline"],
            rounds=[RoundStats(**r) for r in raw["rounds"]],
            early_stopped=raw["early_stopped"],
            no_signal=raw["no_signal"],
        )

    def _stage_pools(self, round_no: int, completed: set) -> list[CandidatePool]:
        name = self._fname(round_no, "pools.jsonl")
        if (round_no, STAGE_BOOTSTRAP) in completed:
            return load_pools(self.run.root / name)
        pools = self._timed(
            f"round{round_no:02d}.bootstrap",
            lambda: run_bootstrap_stage(
                self.backend, self.dataset, self.cfg.bootstrap,
                self.cfg.seed, round_no, self.cfg.workers,
            ),
        )
        save_pools(pools, self.run.root / name)
        self.run.record_stage(round_no, STAGE_BOOTSTRAP, [name])
        return pools

    def _stage_sprs(self, round_no: int, pools, completed: set) -> list[ShortPath]:
        name = self._fname(round_no, "sprs.jsonl")
        if (round_no, STAGE_SYNTHESIZE) in completed:
            return load_sprs(self.run.root / name)
        sprs = self._timed(
            f"round{round_no:02d}.synthesize",
            lambda: run_synthesis_stage(
                self.backend, self.backend, self.dataset, pools,
                self.synthesis_cfg, self.cfg.seed, round_no, self.cfg.workers,
            ),
        )
        save_sprs(sprs, self.run.root / name)
        self.run.record_stage(round_no, STAGE_SYNTHESIZE, [name])
        return sprs

    def _stage_pairs(self, round_no: int, pools, sprs, completed: set) -> list[PreferencePair]:
        pairs_name = self._fname(round_no, "pairs.jsonl")
        pref_name = self._fname(round_no, "pref.jsonl")
        if (round_no, STAGE_PAIRS) in completed:
            return load_pairs(self.run.root / pairs_name)
        pairs = self._timed(
            f"round{round_no:02d}.pairs",
            lambda: run_pairs_stage(self.dataset, pools, sprs),
        )
        save_pairs(pairs, self.run.root / pairs_name)
        export_preferences(pairs, self.run.root / pref_name)
        self.run.record_stage(
            round_no, STAGE_PAIRS,
            [pairs_name, pref_name, pairs_name + ".schema.json", pref_name + ".schema.json"],
        )
        return pairs

    def _stage_train(self, round_no, pairs, reference, completed: set) -> dict[str, Any]:
        train_name = self._fname(round_no, "train.json")
        policy_name = self._fname(round_no, "policies.json")
        if (round_no, STAGE_TRAIN) in completed:
            self.policies.update(load_policies(self.run.root / policy_name))
            return json.loads((self.run.root / train_name).read_text())
        stats = self._timed(
            f"round{round_no:02d}.train",
            lambda: run_train_sim_stage(
                self.worlds, self.policies, reference, pairs,
                self.cfg.dpo, self.cfg.seed, round_no,
            ),
        )
        stats["reference"] = "initial" if self.cfg.freeze_once else f"round{round_no - 1:02d}"
        save_policies(self.policies, self.run.root / policy_name)
        (self.run.root / train_name).write_text(dumps_record(stats) + "\n")
        self.run.record_stage(round_no, STAGE_TRAIN, [train_name, policy_name])
        return stats

    def _stage_eval(self, round_no: int, completed: set) -> dict[str, Any]:
        name = self._fname(round_no, "eval.json")
        if (round_no, STAGE_EVALUATE) in completed:
            return json.loads((self.run.root / name).read_text())
        stats = self._timed(
            f"round{round_no:02d}.evaluate",
            lambda: evaluate_sim(
                self.worlds, self.policies, self.dataset,
                self.cfg.eval_samples, self.cfg.seed, round_no,
            ),
        )
        (self.run.root / name).write_text(dumps_record(stats) + "\n")
        self.run.record_stage(round_no, STAGE_EVALUATE, [name])
        return stats


def run_loop(
    cfg: LoopConfig,
    worlds: Sequence[PivotWorld],
    run_dir: str | Path,
    policies: dict[str, ToyPolicy] | None = None,
) -> RunReport:
    """Run the full self-training loop in simulation mode."""
    if cfg.mode != "sim":
        raise ConfigError("run_loop drives simulation mode; use LiveLoopRunner for live")
    return SimLoopRunner(cfg, worlds, run_dir, policies).execute(resume=False)


def resume(run_dir: str | Path, worlds: Sequence[PivotWorld] | None = None) -> RunReport:
    """Continue a checkpointed simulation run from its last completed stage."""
    run = RunDirectory(run_dir)
    config_path = run.root / "config.json"
    if not config_path.exists():
        raise CheckpointError(f"no config.json in {run.root}")
    raw = json.loads(config_path.read_text())
    cfg = LoopConfig(
        rounds=raw["rounds"],
        seed=raw["seed"],
        mode=raw["mode"],
        eval_samples=raw["eval_samples"],
        workers=raw["workers"],
        freeze_once=raw["freeze_once"],
        early_stop_patience=raw["early_stop_patience"],
        bootstrap=BootstrapConfig(
            pool_size=raw["bootstrap"]["pool_size"],
            guided_budget=raw["bootstrap"]["guided_budget"],
            verify_guided=raw["bootstrap"]["verify_guided"],
        ),
        dpo=DpoConfig(**raw["dpo"]),
    )
    if worlds is None:
        worlds_path = run.root / "worlds.jsonl"
        if not worlds_path.exists():
            raise CheckpointError("resume needs the run's worlds.jsonl or explicit worlds")
        worlds = load_worlds(worlds_path)
    return SimLoopRunner(cfg, worlds, run_dir).execute(resume=True)


# -- live mode ----------------------------------------------------------------

HANDSHAKE_SCHEMA = "handshake/v1"


class LiveLoopRunner:
    """Live-endpoint driver: one export/train/reload handshake per round.

    The reasoner is reconstructed from each round's trained model id, so the
    in-process component never carries training-stack dependencies. The
    reference inside a round is the model id the round started from.
    """

    def __init__(
        self,
        cfg: LoopConfig,
        dataset: Dataset,
        reasoner_factory: Callable[[str], Backend],
        verifier: Backend,
        base_model: str,
        run_dir: str | Path,
        synthesis_cfg: SynthesisConfig | None = None,
        poll_interval: float = 1.0,
        poll_timeout: float = 3600.0,
    ):
        self.cfg = cfg
        self.dataset = dataset
        self.reasoner_factory = reasoner_factory
        self.verifier = verifier
        self.base_model = base_model
        self.run = RunDirectory(run_dir)
        self.synthesis_cfg = synthesis_cfg or SynthesisConfig()
        self.poll_interval = poll_interval
        self.poll_timeout = poll_timeout

    def execute(self) -> RunReport:
        cfg = self.cfg
        model_id = self.base_model
        rounds: list[RoundStats] = []
        total_pairs = 0
        baseline = {"model": model_id}
        for round_no in range(1, cfg.rounds + 1):
            reasoner = self.reasoner_factory(model_id)
            reference_id = model_id
            pools = run_bootstrap_stage(
                reasoner, self.dataset, cfg.bootstrap, cfg.seed, round_no, cfg.workers
            )
            save_pools(pools, self.run.root / f"round{round_no:02d}.pools.jsonl")
            sprs = run_synthesis_stage(
                reasoner, self.verifier, self.dataset, pools,
                self.synthesis_cfg, cfg.seed, round_no, cfg.workers,
            )
            save_sprs(sprs, self.run.root / f"round{round_no:02d}.sprs.jsonl")
            pairs = run_pairs_stage(self.dataset, pools, sprs)
            total_pairs += len(pairs)
            pref_path = self.run.root / f"round{round_no:02d}.pref.jsonl"
            export_preferences(pairs, pref_path)

            train_stats: dict[str, Any] = {"reference": reference_id, "pairs": len(pairs)}
            if pairs:
                job_dir = write_train_job(
                    self.run.root / f"round{round_no:02d}.job", pref_path, model_id, cfg.dpo
                )
                status = poll_handshake(
                    job_dir, timeout=self.poll_timeout, poll_interval=self.poll_interval
                )
                model_id = status["model_id"]
                train_stats["model"] = model_id
                train_stats["trainer_metrics"] = status.get("metrics", {})
            rounds.append(
                RoundStats(
                    round=round_no,
                    pools=_pool_stats(pools),
                    spr=_spr_stats(sprs),
                    pair_count=len(pairs),
                    train=train_stats,
                    eval={"model": model_id},
                )
            )
        report = RunReport(
            baseline=baseline, rounds=rounds, no_signal=total_pairs == 0
        )
        (self.run.root / "report.json").write_text(dumps_record(report.to_json()) + "\n")
        self.run.mark_done()
        return report


def write_train_job(
    job_dir: str | Path,
    pref_path: str | Path,
    base_model: str,
    dpo: DpoConfig,
) -> Path:
    """Create a trainer job directory the external bridge can pick up."""
    job_dir = Path(job_dir)
    job_dir.mkdir(parents=True, exist_ok=True)
    job = {
        "schema": "job/v1",
        "pref_path": str(Path(pref_path).resolve()),
        "base_model": base_model,
        "beta": dpo.beta,
        "lr": dpo.lr,
        "epochs": dpo.epochs,
        "batch_size": dpo.batch_size,
    }
    (job_dir / "job.json").write_text(dumps_record(job) + "\n")
    return job_dir


def poll_handshake(
    job_dir: str | Path,
    timeout: float = 3600.0,
    poll_interval: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.monotonic,
) -> dict[str, Any]:
    """Wait for the bridge's ``status.json`` to reach ``done`` (or ``failed``)."""
    status_path = Path(job_dir) / "status.json"
    deadline = clock() + timeout
    while True:
        if status_path.exists():
            try:
                status = json.loads(status_path.read_text())
            except json.JSONDecodeError:
                status = None  # torn read; try again
            if status and status.get("status") == "done":
                return status
            if status and status.get("status") == "failed":
                raise TransportError(f"trainer job failed: {status.get('error')}")
        if clock() >= deadline:
            raise TransportError(f"trainer handshake timed out after {timeout}s")
        sleep(poll_interval)
