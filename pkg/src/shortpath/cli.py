"""Command-line interface.

Subcommands map one-to-one onto pipeline stages (``bootstrap``,
``synthesize``, ``pairs``, ``export``, ``train-sim``, ``evaluate``) plus the
end-to-end ``loop`` and ``resume``. Exit codes: 0 success, 2 configuration
error, 3 backend failure, 4 no signal (zero preference pairs).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .backends import DecodeParams, OpenAICompatBackend
from .bootstrap import BootstrapConfig, load_pools, save_pools
from .corpus import LabelSpace, load_dataset
from .errors import CheckpointError, ConfigError, PipelineError, TransportError
from .metrics import accuracy, format_table, pivot_retrieval_rate, write_report
from .orchestrator import (
    LiveLoopRunner,
    LoopConfig,
    RunReport,
    evaluate_sim,
    load_policies,
    resume as resume_run,
    run_bootstrap_stage,
    run_loop,
    run_pairs_stage,
    run_synthesis_stage,
    run_train_sim_stage,
    save_policies,
)
from .preference import DpoConfig, export_preferences, load_pairs, save_pairs
from .simulator import (
    SimBackend,
    ToyPolicy,
    generate_worlds,
    load_worlds,
    save_worlds,
    worlds_to_dataset,
)
from .synthesis import SynthesisConfig, load_sprs, save_sprs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_NO_SIGNAL = 4


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    text = Path(path).read_text()
    data = yaml.safe_load(text) if path.endswith((".yaml", ".yml")) else json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return data


def _sim_backend(args) -> tuple[SimBackend, Any]:
    worlds = load_worlds(args.worlds)
    policies = (
        load_policies(args.policies)
        if getattr(args, "policies", None)
        else {w.world_id: ToyPolicy.uniform(w) for w in worlds}
    )
    backend = SimBackend({w.world_id: w for w in worlds}, policies)
    return backend, worlds


def _live_backend(args) -> OpenAICompatBackend:
    if not args.base_url or not args.model:
        raise ConfigError("live mode needs --base-url and --model")
    space = (
        LabelSpace.mcq(args.label_space.split(","))
        if args.label_space
        else LabelSpace.free_form()
    )
    return OpenAICompatBackend(
        base_url=args.base_url,
        model=args.model,
        label_space=space,
        api_key_env=args.api_key_env,
    )


def _pick_backend(args):
    if getattr(args, "base_url", None):
        backend = _live_backend(args)
        dataset = load_dataset(args.dataset, label_space=backend.label_space)
        return backend, dataset
    backend, worlds = _sim_backend(args)
    return backend, worlds_to_dataset(worlds)


def cmd_generate_worlds(args) -> int:
    worlds = generate_worlds(args.count, seed=args.seed)
    save_worlds(worlds, args.out)
    print(f"wrote {len(worlds)} worlds to {args.out}")
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    backend, dataset = _pick_backend(args)
    cfg = BootstrapConfig(
        pool_size=args.pool_size,
        guided_budget=args.guided_budget,
        verify_guided=args.verify_guided,
    )
    pools = run_bootstrap_stage(backend, dataset, cfg, args.seed, args.round, args.workers)
    save_pools(pools, args.out)
    with_signal = sum(p.has_signal for p in pools)
    print(f"built {len(pools)} pools ({with_signal} with signal) -> {args.out}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    backend, dataset = _pick_backend(args)
    pools = load_pools(args.pools)
    sprs = run_synthesis_stage(
        backend, backend, dataset, pools, SynthesisConfig(), args.seed, args.round, args.workers
    )
    save_sprs(sprs, args.out)
    passed = sum(s.check_passed for s in sprs)
    print(f"synthesized {len(sprs)} short paths ({passed} passed the check) -> {args.out}")
    return EXIT_OK


def cmd_pairs(args) -> int:
    backend, dataset = _pick_backend(args)
    pools = load_pools(args.pools)
    sprs = load_sprs(args.sprs)
    pairs = run_pairs_stage(dataset, pools, sprs)
    save_pairs(pairs, args.out)
    print(f"built {len(pairs)} preference pairs -> {args.out}")
    return EXIT_OK if pairs else EXIT_NO_SIGNAL


def cmd_export(args) -> int:
    pairs = load_pairs(args.pairs)
    export_preferences(pairs, args.out)
    print(f"exported {len(pairs)} pairs -> {args.out}")
    return EXIT_OK if pairs else EXIT_NO_SIGNAL


def cmd_train_sim(args) -> int:
    worlds = load_worlds(args.worlds)
    world_map = {w.world_id: w for w in worlds}
    policies = (
        load_policies(args.policies)
        if args.policies
        else {w.world_id: ToyPolicy.uniform(w) for w in worlds}
    )
    reference = {wid: p.copy() for wid, p in policies.items()}
    pairs = load_pairs(args.pairs)
    if not pairs:
        print("no pairs: nothing to train on")
        return EXIT_NO_SIGNAL
    dpo = DpoConfig(beta=args.beta, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size)
    stats = run_train_sim_stage(world_map, policies, reference, pairs, dpo, args.seed, args.round)
    save_policies(policies, args.out_policies)
    first = stats["loss_curve"][0] if stats["loss_curve"] else float("nan")
    last = stats["loss_curve"][-1] if stats["loss_curve"] else float("nan")
    print(f"trained on {len(pairs)} pairs: batch loss {first:.4f} -> {last:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    backend, dataset = _pick_backend(args)
    rows = []
    if isinstance(backend, SimBackend):
        worlds = backend.worlds
        stats = evaluate_sim(
            worlds, backend.policies, dataset, args.eval_samples, args.seed, args.round
        )
        rows.append({"metric": "accuracy", "value": stats["accuracy"]})
        rows.append({"metric": "mean_tokens", "value": stats["mean_tokens"]})
    else:
        rng = np.random.default_rng(args.seed)
        rows.append(
            {"metric": "accuracy", "value": accuracy(backend, dataset, DecodeParams(), rng)}
        )
    if args.retrieval:
        rng = np.random.default_rng(args.seed + 1)
        report = pivot_retrieval_rate(backend, dataset, args.retrieval, rng=rng)
        rows.append({"metric": "pivot_retrieval_per_trace", "value": report.per_trace_rate})
        rows.append({"metric": f"pivot_retrieval_any_of_{args.retrieval}", "value": report.any_rate})
    if args.out:
        write_report(rows, args.out)
    print(format_table(rows, ["metric", "value"]))
    return EXIT_OK


def _loop_config_from(args) -> tuple[LoopConfig, dict[str, Any]]:
    raw = _load_config_file(args.config)
    bootstrap_raw = dict(raw.get("bootstrap", {}))
    dpo_raw = dict(raw.get("dpo", {}))
    if args.pool_size is not None:
        bootstrap_raw["pool_size"] = args.pool_size
    if args.lr is not None:
        dpo_raw["lr"] = args.lr
    try:
        cfg = LoopConfig(
            rounds=args.rounds if args.rounds is not None else raw.get("rounds", 3),
            seed=args.seed if args.seed is not None else raw.get("seed", 0),
            mode=raw.get("mode", "sim"),
            eval_samples=raw.get("eval_samples", 25),
            workers=raw.get("workers", 1),
            freeze_once=bool(
                args.freeze_once if args.freeze_once else raw.get("freeze_once", False)
            ),
            early_stop_patience=raw.get("early_stop_patience"),
            bootstrap=BootstrapConfig(**bootstrap_raw),
            dpo=DpoConfig(**dpo_raw),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg, raw


def _loop_worlds(args, raw: dict[str, Any]):
    worlds_cfg = raw.get("worlds", {})
    if args.worlds:
        return load_worlds(args.worlds)
    if "file" in worlds_cfg:
        return load_worlds(worlds_cfg["file"])
    generate = worlds_cfg.get("generate")
    if generate:
        return generate_worlds(int(generate["count"]), seed=int(generate.get("seed", 0)))
    raise ConfigError("loop needs worlds: pass --worlds or configure worlds.file/generate")


def cmd_loop(args) -> int:
    cfg, raw = _loop_config_from(args)
    if cfg.mode == "live":
        live = raw.get("live", {})
        for key in ("base_url", "model", "dataset"):
            if key not in live:
                raise ConfigError(f"live loop config needs live.{key}")
        space = (
            LabelSpace.mcq(live["label_space"])
            if live.get("label_space")
            else LabelSpace.free_form()
        )
        dataset = load_dataset(live["dataset"], label_space=space)

        def factory(model_id: str):
            return OpenAICompatBackend(
                base_url=live["base_url"],
                model=model_id,
                label_space=space,
                api_key_env=live.get("api_key_env", "OPENAI_API_KEY"),
            )

        verifier = OpenAICompatBackend(
            base_url=live.get("verifier_base_url", live["base_url"]),
            model=live.get("verifier_model", live["model"]),
            label_space=space,
            api_key_env=live.get("api_key_env", "OPENAI_API_KEY"),
        )
        runner = LiveLoopRunner(
            cfg,
            dataset,
            factory,
            verifier,
            base_model=live["model"],
            run_dir=args.run_dir,
            poll_interval=float(live.get("poll_interval", 5.0)),
            poll_timeout=float(live.get("poll_timeout", 3600.0)),
        )
        report = runner.execute()
    else:
        worlds = _loop_worlds(args, raw)
        report = run_loop(cfg, worlds, args.run_dir)
    _print_report(report)
    return EXIT_NO_SIGNAL if report.no_signal else EXIT_OK


def cmd_resume(args) -> int:
    report = resume_run(args.run_dir)
    _print_report(report)
    return EXIT_NO_SIGNAL if report.no_signal else EXIT_OK


def _print_report(report: RunReport) -> None:
    rows = []
    baseline_acc = report.baseline.get("accuracy")
    if baseline_acc is not None:
        rows.append(
            {
                "round": 0,
                "accuracy": report.baseline["accuracy"],
                "mean_tokens": report.baseline["mean_tokens"],
                "pairs": "",
                "fallback_rate": "",
            }
        )
    for stats in report.rounds:
        rows.append(
            {
                "round": stats.round,
                "accuracy": stats.eval.get("accuracy", ""),
                "mean_tokens": stats.eval.get("mean_tokens", ""),
                "pairs": stats.pair_count,
                "fallback_rate": stats.spr.get("fallback_rate", ""),
            }
        )
    print(format_table(rows, ["round", "accuracy", "mean_tokens", "pairs", "fallback_rate"]))
    if report.no_signal:
        print("no signal: zero preference pairs were produced")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shortpath",
        description="Decision-pivot self-training pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, live=True):
        p.add_argument("--worlds", help="world/v1 JSONL (simulation mode)")
        p.add_argument("--policies", help="policy snapshot JSON (simulation mode)")
        if live:
            p.add_argument("--dataset", help="dataset/v1 JSONL (live mode)")
            p.add_argument("--base-url", help="OpenAI-compatible endpoint (live mode)")
            p.add_argument("--model", help="model name (live mode)")
            p.add_argument("--api-key-env", default="OPENAI_API_KEY")
            p.add_argument("--label-space", help="comma-separated MCQ options")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--round", type=int, default=1)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("generate-worlds", help="write a seeded world/v1 fixture")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_worlds)

    p = sub.add_parser("bootstrap", help="stage A: sample candidate pools")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--pool-size", type=int, default=7)
    p.add_argument("--guided-budget", type=int, default=None)
    p.add_argument("--verify-guided", action="store_true")
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("synthesize", help="stage B: consolidate verified short paths")
    add_common(p)
    p.add_argument("--pools", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("pairs", help="stage C: build preference pairs")
    add_common(p)
    p.add_argument("--pools", required=True)
    p.add_argument("--sprs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("export", help="convert pairs/v1 to pref/v1 for the trainer")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("train-sim", help="apply DPO updates to simulator policies")
    p.add_argument("--worlds", required=True)
    p.add_argument("--policies")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out-policies", required=True)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--round", type=int, default=1)
    p.set_defaults(func=cmd_train_sim)

    p = sub.add_parser("evaluate", help="accuracy/length/retrieval metrics")
    add_common(p)
    p.add_argument("--out", help="report/v1 JSONL destination")
    p.add_argument("--eval-samples", type=int, default=25)
    p.add_argument("--retrieval", type=int, default=0, help="Q samples per prompt")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("loop", help="run the full self-training loop")
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--worlds")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--pool-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--freeze-once", action="store_true")
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("resume", help="continue a checkpointed run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_resume)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TransportError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
