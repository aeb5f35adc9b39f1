"""Job execution and the ``handshake/v1`` status protocol.

A job directory contains ``job.json`` (written by the orchestrator or by
hand) and receives ``status.json`` transitions ``queued -> running -> done``
(or ``failed``). Status writes are atomic (write-then-rename) and terminal
states are write-once: a ``done`` or ``failed`` status is never overwritten.
The preference file itself is read-only to the bridge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .pref import load_pref_records, validate_pref_file

HANDSHAKE_SCHEMA = "handshake/v1"


class NoSignalError(Exception):
    """The preference file holds zero pairs; there is nothing to train on."""


class StackError(Exception):
    """The training stack failed mid-job."""


@dataclass(frozen=True)
class TrainJob:
    """One DPO fine-tuning job over a pref/v1 file."""

    pref_path: str
    base_model: str
    out_dir: str
    lr: float = 1e-06
    epochs: int = 3
    beta: float = 0.1
    lora_r: int = 16
    lora_alpha: int = 32
    batch_size: int = 4
    max_len: int = 512
    seed: int = 0

    @classmethod
    def from_job_dir(cls, job_dir: str | Path, out_dir: str | Path | None = None) -> "TrainJob":
        job_dir = Path(job_dir)
        raw = json.loads((job_dir / "job.json").read_text())
        return cls(
            pref_path=raw["pref_path"],
            base_model=raw["base_model"],
            out_dir=str(out_dir if out_dir is not None else job_dir / "model"),
            lr=float(raw.get("lr", 1e-06)),
            epochs=int(raw.get("epochs", 3)),
            beta=float(raw.get("beta", 0.1)),
            lora_r=int(raw.get("lora_r", 16)),
            lora_alpha=int(raw.get("lora_alpha", 32)),
            batch_size=int(raw.get("batch_size", 4)),
            max_len=int(raw.get("max_len", 512)),
            seed=int(raw.get("seed", 0)),
        )


def read_status(job_dir: str | Path) -> dict[str, Any] | None:
    path = Path(job_dir) / "status.json"
    if not path.exists():
        return None
    return json.loads(path.read_text())


def write_status(
    job_dir: str | Path,
    status: str,
    model_id: str | None = None,
    metrics: dict[str, Any] | None = None,
    error: str | None = None,
) -> None:
    job_dir = Path(job_dir)
    job_dir.mkdir(parents=True, exist_ok=True)
    current = read_status(job_dir)
    if current and current.get("status") in ("done", "failed"):
        raise StackError(f"status is terminal ({current['status']}); handshake is write-once")
    payload = {
        "schema": HANDSHAKE_SCHEMA,
        "status": status,
        "model_id": model_id,
        "metrics": metrics or {},
        "error": error,
    }
    tmp = job_dir / "status.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2) + "\n")
    tmp.replace(job_dir / "status.json")


def run_dpo_job(job: TrainJob, job_dir: str | Path) -> str:
    """Validate, train, save, and emit the ``done`` handshake.

    Returns the trained model identifier (the saved model directory). Raises
    ``NoSignalError`` for an empty preference file and ``ValueError`` naming
    the line for a schema-invalid one; stack failures write a ``failed``
    status before re-raising.
    """
    job_dir = Path(job_dir)
    report = validate_pref_file(job.pref_path)
    if not report.ok:
        lineno, message = report.errors[0]
        raise ValueError(f"{job.pref_path}: line {lineno}: {message}")
    if report.empty:
        raise NoSignalError(f"{job.pref_path} holds zero preference pairs")

    write_status(job_dir, "queued")
    pref_bytes = Path(job.pref_path).read_bytes()
    try:
        write_status(job_dir, "running")
        metrics = _train(job)
    except Exception as exc:
        write_status(job_dir, "failed", error=str(exc))
        raise StackError(str(exc)) from exc
    if Path(job.pref_path).read_bytes() != pref_bytes:
        raise StackError("preference file changed during training")
    model_id = str(Path(job.out_dir).resolve())
    write_status(job_dir, "done", model_id=model_id, metrics=metrics)
    return model_id


def _train(job: TrainJob) -> dict[str, Any]:
    # Imports are deferred so validation stays cheap and torch-free.
    from transformers import AutoModelForCausalLM, AutoTokenizer

    from .dpo import train_dpo
    from .lora import apply_lora

    records = load_pref_records(job.pref_path)
    tokenizer = AutoTokenizer.from_pretrained(job.base_model)
    model = AutoModelForCausalLM.from_pretrained(job.base_model)
    trainable = apply_lora(model, r=job.lora_r, alpha=job.lora_alpha)
    metrics = train_dpo(
        model,
        tokenizer,
        records,
        trainable,
        beta=job.beta,
        lr=job.lr,
        epochs=job.epochs,
        batch_size=job.batch_size,
        max_len=job.max_len,
        seed=job.seed,
    )
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    merged = _merge_adapters(model)
    merged.save_pretrained(out_dir)
    tokenizer.save_pretrained(out_dir)
    metrics["parameters"] = sum(p.numel() for p in merged.parameters())
    return metrics


def _merge_adapters(model):
    """Fold LoRA updates into the base weights for a standalone checkpoint."""
    import torch

    from .lora import LoRAConv1D

    for module in list(model.modules()):
        for name, child in list(module.named_children()):
            if isinstance(child, LoRAConv1D):
                with torch.no_grad():
                    child.base.weight += (child.lora_a @ child.lora_b) * child.scaling
                setattr(module, name, child.base)
    return model
