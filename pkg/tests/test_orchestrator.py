"""Loop engine tests: determinism, resume, accounting, handshake, CLI."""

import json
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from shortpath.backends import Backend, BackendCaps, ChannelledOutput, Provenance, ReasoningTrace
from shortpath.bootstrap import BootstrapConfig, load_pools, pool_to_Rplus
from shortpath.cli import main as cli_main
from shortpath.corpus import Dataset, Example, Label, LabelSpace
from shortpath.errors import CheckpointError, ConfigError, TransportError
from shortpath.orchestrator import (
    LiveLoopRunner,
    LoopConfig,
    load_policies,
    poll_handshake,
    resume,
    run_loop,
    write_train_job,
)
from shortpath.preference import DpoConfig, load_pairs, load_preferences
from shortpath.simulator import PivotWorld, ToyPolicy, generate_worlds, save_worlds
from shortpath.synthesis import load_sprs

FAST_DPO = DpoConfig(beta=0.1, lr=10.0, epochs=2, batch_size=8)


def small_cfg(seed=0, rounds=1, **kwargs):
    defaults = dict(
        rounds=rounds,
        seed=seed,
        eval_samples=10,
        bootstrap=BootstrapConfig(pool_size=4),
        dpo=FAST_DPO,
    )
    defaults.update(kwargs)
    return LoopConfig(**defaults)


def run_files(run_dir: Path, volatile=("timings.json",)):
    return sorted(
        p.relative_to(run_dir).as_posix()
        for p in run_dir.rglob("*")
        if p.is_file() and p.name not in volatile
    )


class TestLoopDeterminism:
    def test_two_runs_are_byte_identical(self, tmp_path):
        worlds = generate_worlds(12, seed=5)
        for name in ("a", "b"):
            run_loop(small_cfg(seed=3), generate_worlds(12, seed=5), tmp_path / name)
        files_a = run_files(tmp_path / "a")
        files_b = run_files(tmp_path / "b")
        assert files_a == files_b
        for name in files_a:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_report_reflects_round_structure(self, tmp_path):
        report = run_loop(small_cfg(rounds=2), generate_worlds(8, seed=1), tmp_path / "r")
        assert len(report.rounds) == 2
        assert report.baseline["accuracy"] >= 0.0
        assert not report.no_signal

    def test_solvable_dataset_yields_pairs_and_decreasing_loss(self, tmp_path):
        cfg = small_cfg(seed=1, dpo=DpoConfig(beta=0.1, lr=10.0, epochs=4, batch_size=8))
        report = run_loop(cfg, generate_worlds(20, seed=71), tmp_path / "run")
        stats = report.rounds[0]
        assert stats.pair_count >= 1
        curve = stats.train["loss_curve"]
        assert len(curve) >= 2
        assert curve[-1] < curve[0]


class TestPairAccounting:
    def test_pair_count_equals_rplus_minus_spr(self, tmp_path):
        run_dir = tmp_path / "run"
        report = run_loop(small_cfg(seed=11), generate_worlds(15, seed=21), run_dir)
        pools = load_pools(run_dir / "round01.pools.jsonl")
        sprs = {s.example_id: s for s in load_sprs(run_dir / "round01.sprs.jsonl")}
        expected = 0
        for pool in pools:
            spr = sprs.get(pool.example_id)
            if spr is None:
                continue
            rplus = pool_to_Rplus(pool)
            expected += sum(1 for t in rplus if t.raw_text != spr.trace.raw_text)
        assert report.rounds[0].pair_count == expected
        pairs = load_pairs(run_dir / "round01.pairs.jsonl")
        assert len(pairs) == expected

    def test_exported_pref_file_parses(self, tmp_path):
        run_dir = tmp_path / "run"
        report = run_loop(small_cfg(seed=2), generate_worlds(10, seed=31), run_dir)
        records = load_preferences(run_dir / "round01.pref.jsonl")
        assert len(records) == report.rounds[0].pair_count


class TestNoSignal:
    def test_unreachable_pools_flag_no_signal(self, tmp_path):
        # Zero guided budget plus a never-covering policy: no example yields
        # a successful subset, so the loop produces zero pairs and no update.
        world = PivotWorld(
            world_id="w0000",
            nodes=("n00", "n01", "n02", "n03"),
            edges=(("n00", "n01"), ("n00", "n02"), ("n01", "n03"), ("n02", "n03")),
            source="n00",
            sink="n03",
            pivots=frozenset({"n01"}),
            gold_label=Label("A"),
            distractor_labels=(Label("B"),),
        )
        policies = {
            "w0000": ToyPolicy(
                edge_logits={
                    ("n00", "n01"): -60.0,
                    ("n00", "n02"): 0.0,
                    ("n01", "n03"): 0.0,
                    ("n02", "n03"): 0.0,
                }
            )
        }
        cfg = small_cfg(bootstrap=BootstrapConfig(pool_size=3, guided_budget=0))
        report = run_loop(cfg, [world], tmp_path / "r", policies=policies)
        assert report.no_signal
        assert report.rounds[0].pair_count == 0
        assert report.rounds[0].train["updates"] == 0


class TestFrozenReference:
    def test_round_policies_change_but_reference_does_not(self, tmp_path):
        run_dir = tmp_path / "run"
        run_loop(small_cfg(seed=4, rounds=2), generate_worlds(10, seed=41), run_dir)
        initial = load_policies(run_dir / "round00.policies.json")
        after_1 = load_policies(run_dir / "round01.policies.json")
        after_2 = load_policies(run_dir / "round02.policies.json")
        # Training moved at least one logit each round.
        assert initial != after_1
        assert after_1 != after_2

    def test_freeze_once_records_initial_reference(self, tmp_path):
        report = run_loop(
            small_cfg(seed=4, rounds=2, freeze_once=True),
            generate_worlds(10, seed=41),
            tmp_path / "run",
        )
        assert all(r.train["reference"] == "initial" for r in report.rounds)

    def test_per_round_refreeze_is_default(self, tmp_path):
        report = run_loop(
            small_cfg(seed=4, rounds=2), generate_worlds(10, seed=41), tmp_path / "run"
        )
        assert report.rounds[0].train["reference"] == "round00"
        assert report.rounds[1].train["reference"] == "round01"


class TestResume:
    def test_resume_after_complete_run_is_noop(self, tmp_path):
        run_dir = tmp_path / "run"
        first = run_loop(small_cfg(seed=9), generate_worlds(8, seed=51), run_dir)
        before = {n: (run_dir / n).read_bytes() for n in run_files(run_dir)}
        again = resume(run_dir)
        assert again.to_json() == first.to_json()
        after = {n: (run_dir / n).read_bytes() for n in run_files(run_dir)}
        assert before == after

    def test_resume_midway_matches_uninterrupted_run(self, tmp_path):
        cfg = small_cfg(seed=9, rounds=2)
        full_dir = tmp_path / "full"
        run_loop(cfg, generate_worlds(8, seed=51), full_dir)

        # Interrupted twin: replay, then delete everything recorded after
        # round 2's bootstrap stage to fake a crash between stages.
        part_dir = tmp_path / "part"
        run_loop(cfg, generate_worlds(8, seed=51), part_dir)
        manifest = json.loads((part_dir / "manifest.json").read_text())
        kept, dropped_files = [], []
        for stage in manifest["stages"]:
            if (stage["round"], stage["stage"]) <= (2, "bootstrap"):
                kept.append(stage)
            else:
                dropped_files.extend(stage["files"])
        manifest["stages"] = kept
        manifest["done"] = False
        (part_dir / "manifest.json").write_text(json.dumps(manifest))
        for name in dropped_files:
            (part_dir / name).unlink(missing_ok=True)
        (part_dir / "report.json").unlink()
        (part_dir / "timings.json").unlink()

        resumed = resume(part_dir)
        for name in run_files(full_dir):
            assert (part_dir / name).read_bytes() == (full_dir / name).read_bytes(), name

    def test_tampered_checkpoint_rejected(self, tmp_path):
        run_dir = tmp_path / "run"
        run_loop(small_cfg(seed=9), generate_worlds(6, seed=51), run_dir)
        pools = run_dir / "round01.pools.jsonl"
        pools.write_bytes(pools.read_bytes() + b'{"example_id": "fake"}\n')
        manifest = json.loads((run_dir / "manifest.json").read_text())
        manifest["done"] = False
        (run_dir / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="hash mismatch"):
            resume(run_dir)

    def test_tampered_worlds_rejected(self, tmp_path):
        run_dir = tmp_path / "run"
        run_loop(small_cfg(seed=9), generate_worlds(6, seed=51), run_dir)
        worlds_file = run_dir / "worlds.jsonl"
        body = worlds_file.read_text().splitlines()
        worlds_file.write_text("\n".join(body[1:]) + "\n")
        manifest = json.loads((run_dir / "manifest.json").read_text())
        manifest["done"] = False
        (run_dir / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="hash mismatch"):
            resume(run_dir)

    def test_resume_without_config_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            resume(tmp_path / "nothing")


class TestEarlyStop:
    def test_patience_stops_loop(self, tmp_path):
        # Patience 1 with an aggressive schedule: once accuracy stops
        # improving, later rounds are skipped.
        cfg = small_cfg(seed=6, rounds=4, early_stop_patience=1)
        report = run_loop(cfg, generate_worlds(8, seed=61), tmp_path / "run")
        if report.early_stopped:
            assert len(report.rounds) < 4
        else:
            assert len(report.rounds) == 4


class TestHandshake:
    def test_write_job_then_poll(self, tmp_path):
        pref = tmp_path / "pref.jsonl"
        pref.write_text('{"id": "a", "prompt": "q", "chosen": "c", "rejected": "r"}\n')
        job_dir = write_train_job(tmp_path / "job", pref, "base-model", DpoConfig())
        job = json.loads((job_dir / "job.json").read_text())
        assert job["base_model"] == "base-model"
        assert job["epochs"] == 3

        def trainer():
            time.sleep(0.05)
            (job_dir / "status.json").write_text(
                json.dumps({"schema": "handshake/v1", "status": "done", "model_id": "tuned-1"})
            )

        thread = threading.Thread(target=trainer)
        thread.start()
        status = poll_handshake(job_dir, timeout=5.0, poll_interval=0.01)
        thread.join()
        assert status["model_id"] == "tuned-1"

    def test_failed_job_raises(self, tmp_path):
        job_dir = tmp_path / "job"
        job_dir.mkdir()
        (job_dir / "status.json").write_text(
            json.dumps({"status": "failed", "error": "oom"})
        )
        with pytest.raises(TransportError, match="oom"):
            poll_handshake(job_dir, timeout=1.0, poll_interval=0.01)

    def test_timeout(self, tmp_path):
        job_dir = tmp_path / "job"
        job_dir.mkdir()
        with pytest.raises(TransportError, match="timed out"):
            poll_handshake(job_dir, timeout=0.05, poll_interval=0.01)


class _ScriptedBackend(Backend):
    """Live-mode stand-in: deterministic outputs keyed by the model id."""

    def __init__(self, model_id, label_space):
        self.model_id = model_id
        self.label_space = label_space

    @property
    def backend_id(self):
        return f"scripted#{self.model_id}"

    def caps(self):
        return BackendCaps(False, False, False)

    def predict_with_reasoning(self, x, decode):
        text = f"fact one about {x.id} (from {self.model_id}, seed {decode.seed})\nfact two"
        trace = ReasoningTrace.from_text(
            text, Provenance.ZERO_SHOT, predicted_label=x.gold_label
        )
        return trace, x.gold_label

    def justify(self, x, y, decode):
        return ReasoningTrace.from_text("guided fact", Provenance.GUIDED, predicted_label=y)

    def label_probability(self, x, trace):
        options = self.label_space.options
        return {v: (1.0 if v == x.gold_label.value else 0.0) for v in options}

    def consolidate(self, x, rplus, prompt, decode):
        return ChannelledOutput(output="- fact one\n\nshared fact one summary")


class TestLiveLoop:
    def test_one_round_with_fake_trainer(self, tmp_path):
        space = LabelSpace.mcq(["A", "B"])
        dataset = Dataset(
            label_space=space,
            examples=[
                Example(id=f"q{i}", question=f"Question {i}?", gold_label=Label("A"))
                for i in range(3)
            ],
        )
        run_dir = tmp_path / "live"
        cfg = LoopConfig(
            rounds=1, seed=0, mode="live", eval_samples=1,
            bootstrap=BootstrapConfig(pool_size=3), dpo=DpoConfig(),
        )
        runner = LiveLoopRunner(
            cfg,
            dataset,
            reasoner_factory=lambda model: _ScriptedBackend(model, space),
            verifier=_ScriptedBackend("verifier", space),
            base_model="base-v0",
            run_dir=run_dir,
            poll_interval=0.01,
            poll_timeout=5.0,
        )

        def fake_trainer():
            job_dir = run_dir / "round01.job"
            while not (job_dir / "job.json").exists():
                time.sleep(0.01)
            job = json.loads((job_dir / "job.json").read_text())
            assert Path(job["pref_path"]).exists()
            (job_dir / "status.json").write_text(
                json.dumps({"schema": "handshake/v1", "status": "done", "model_id": "tuned-v1"})
            )

        thread = threading.Thread(target=fake_trainer)
        thread.start()
        report = runner.execute()
        thread.join()
        assert report.rounds[0].train["model"] == "tuned-v1"
        assert report.rounds[0].pair_count > 0
        assert (run_dir / "round01.pref.jsonl").exists()


class TestCli:
    def test_stagewise_pipeline(self, tmp_path):
        worlds_path = tmp_path / "worlds.jsonl"
        assert cli_main(
            ["generate-worlds", "--count", "6", "--seed", "3", "--out", str(worlds_path)]
        ) == 0
        pools = tmp_path / "pools.jsonl"
        assert cli_main(
            ["bootstrap", "--worlds", str(worlds_path), "--out", str(pools),
             "--pool-size", "4", "--seed", "1"]
        ) == 0
        sprs = tmp_path / "sprs.jsonl"
        assert cli_main(
            ["synthesize", "--worlds", str(worlds_path), "--pools", str(pools),
             "--out", str(sprs), "--seed", "1"]
        ) == 0
        pairs = tmp_path / "pairs.jsonl"
        code = cli_main(
            ["pairs", "--worlds", str(worlds_path), "--pools", str(pools),
             "--sprs", str(sprs), "--out", str(pairs)]
        )
        assert code in (0, 4)
        pref = tmp_path / "pref.jsonl"
        assert cli_main(["export", "--pairs", str(pairs), "--out", str(pref)]) == code
        if code == 0:
            policies = tmp_path / "policies.json"
            assert cli_main(
                ["train-sim", "--worlds", str(worlds_path), "--pairs", str(pairs),
                 "--out-policies", str(policies), "--lr", "5.0"]
            ) == 0
            assert policies.exists()

    def test_loop_and_resume_exit_codes(self, tmp_path, capsys):
        worlds_path = tmp_path / "worlds.jsonl"
        save_worlds(generate_worlds(6, seed=3), worlds_path)
        run_dir = tmp_path / "run"
        code = cli_main(
            ["loop", "--worlds", str(worlds_path), "--run-dir", str(run_dir),
             "--rounds", "1", "--seed", "2", "--pool-size", "4", "--lr", "5.0"]
        )
        assert code == 0
        assert (run_dir / "report.json").exists()
        assert cli_main(["resume", "--run-dir", str(run_dir)]) == 0
        out = capsys.readouterr().out
        assert "round" in out and "accuracy" in out

    def test_config_error_exit_code(self, tmp_path):
        assert cli_main(["loop", "--run-dir", str(tmp_path / "x")]) == 2

    def test_evaluate_with_retrieval(self, tmp_path, capsys):
        worlds_path = tmp_path / "worlds.jsonl"
        save_worlds(generate_worlds(4, seed=3), worlds_path)
        out = tmp_path / "report.jsonl"
        assert cli_main(
            ["evaluate", "--worlds", str(worlds_path), "--out", str(out),
             "--eval-samples", "5", "--retrieval", "3", "--seed", "0"]
        ) == 0
        assert out.exists()
        printed = capsys.readouterr().out
        assert "pivot_retrieval_per_trace" in printed

    def test_unknown_command_is_config_error(self):
        assert cli_main(["definitely-not-a-command"]) == 2
