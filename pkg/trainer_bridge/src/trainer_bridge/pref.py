"""Validation for ``pref/v1`` preference files.

One JSON object per line with string fields ``id``, ``prompt``, ``chosen``,
``rejected`` (``prompt_labeled`` is tolerated and ignored); ``chosen`` must
differ from ``rejected``. The bridge never mutates these files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

REQUIRED_KEYS = ("id", "prompt", "chosen", "rejected")


@dataclass
class ValidationReport:
    path: str
    total: int = 0
    valid: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def empty(self) -> bool:
        return self.total == 0

    def summary(self) -> str:
        status = "ok" if self.ok else f"{len(self.errors)} invalid"
        return f"{self.path}: {self.valid}/{self.total} lines valid ({status})"


def validate_pref_file(path: str | Path) -> ValidationReport:
    """Per-line schema verdicts; errors carry their 1-based line numbers."""
    report = ValidationReport(path=str(path))
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            report.total += 1
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                report.errors.append((lineno, f"invalid JSON: {exc.msg}"))
                continue
            if not isinstance(record, dict):
                report.errors.append((lineno, "record is not an object"))
                continue
            problem = None
            for key in REQUIRED_KEYS:
                if key not in record:
                    problem = f"missing key {key!r}"
                    break
                if not isinstance(record[key], str):
                    problem = f"key {key!r} is not a string"
                    break
                if key != "prompt" and not record[key]:
                    problem = f"key {key!r} is empty"
                    break
            if problem is None and record["chosen"] == record["rejected"]:
                problem = "chosen equals rejected"
            if problem is None:
                report.valid += 1
            else:
                report.errors.append((lineno, problem))
    return report


def load_pref_records(path: str | Path) -> list[dict[str, str]]:
    """Strictly load a validated file; raises on the first bad line."""
    report = validate_pref_file(path)
    if not report.ok:
        lineno, message = report.errors[0]
        raise ValueError(f"{path}: line {lineno}: {message}")
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records
