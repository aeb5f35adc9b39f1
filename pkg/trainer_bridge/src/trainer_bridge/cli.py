"""Command-line interface for the trainer bridge.

Exit codes mirror the pipeline's: 0 success, 1 validation errors,
2 configuration error, 3 training-stack failure, 4 no signal (empty file).
"""

from __future__ import annotations

import argparse
import sys

from .jobs import NoSignalError, StackError, TrainJob, run_dpo_job
from .pref import validate_pref_file
from .tiny_model import init_tiny_model

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CONFIG = 2
EXIT_STACK = 3
EXIT_NO_SIGNAL = 4


def cmd_validate(args) -> int:
    report = validate_pref_file(args.pref)
    print(report.summary())
    for lineno, message in report.errors[: args.max_errors]:
        print(f"  line {lineno}: {message}")
    if report.empty:
        print("no signal: the file holds zero preference pairs")
        return EXIT_NO_SIGNAL
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_init_tiny_model(args) -> int:
    out_dir, params = init_tiny_model(
        args.out,
        n_layer=args.layers,
        n_embd=args.embd,
        n_head=args.heads,
        seed=args.seed,
    )
    print(f"initialized {params:,}-parameter model at {out_dir}")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.job_dir:
        job = TrainJob.from_job_dir(args.job_dir, out_dir=args.out)
        job_dir = args.job_dir
    else:
        if not (args.pref and args.base_model and args.out):
            print("error: run needs --job-dir, or --pref with --base-model and --out", file=sys.stderr)
            return EXIT_CONFIG
        job = TrainJob(
            pref_path=args.pref,
            base_model=args.base_model,
            out_dir=args.out,
            lr=args.lr,
            epochs=args.epochs,
            beta=args.beta,
            batch_size=args.batch_size,
            seed=args.seed,
        )
        job_dir = args.out + ".job"
    try:
        model_id = run_dpo_job(job, job_dir)
    except NoSignalError as exc:
        print(f"no signal: {exc}", file=sys.stderr)
        return EXIT_NO_SIGNAL
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StackError as exc:
        print(f"training stack failure: {exc}", file=sys.stderr)
        return EXIT_STACK
    print(f"done: {model_id}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trainer-bridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="per-line schema verdicts for a pref/v1 file")
    p.add_argument("--pref", required=True)
    p.add_argument("--max-errors", type=int, default=20)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("init-tiny-model", help="create a local sub-100M base model")
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--embd", type=int, default=128)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init_tiny_model)

    p = sub.add_parser("run", help="run a DPO job and write the handshake")
    p.add_argument("--job-dir", help="directory holding job.json (orchestrator handshake)")
    p.add_argument("--pref", help="pref/v1 file (standalone mode)")
    p.add_argument("--base-model", help="model path or id (standalone mode)")
    p.add_argument("--out", help="output model directory")
    p.add_argument("--lr", type=float, default=1e-06)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
