"""Line-oriented JSON persistence used by every artifact schema.

All writers in this package go through :func:`dumps_record` so that a given
record always serializes to the same bytes: keys keep their insertion order,
separators are fixed, and non-ASCII text is written verbatim. Each artifact
file may carry a sidecar ``<path>.schema.json`` naming its schema version.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import CorpusError


def dumps_record(record: dict[str, Any]) -> str:
    """Serialize one record deterministically (no trailing newline)."""
    return json.dumps(record, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(dumps_record(record))
            fh.write("\n")


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (1-based line number, record) pairs, skipping blank lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}: line {lineno}: record is not an object")
            yield lineno, record


def schema_sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".schema.json")


def write_schema_sidecar(path: str | Path, schema: str, extra: dict[str, Any] | None = None) -> None:
    record: dict[str, Any] = {"schema": schema}
    if extra:
        record.update(extra)
    sidecar = schema_sidecar_path(path)
    sidecar.parent.mkdir(parents=True, exist_ok=True)
    with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_record(record))
        fh.write("\n")


def read_schema_sidecar(path: str | Path) -> dict[str, Any] | None:
    sidecar = schema_sidecar_path(path)
    if not sidecar.exists():
        return None
    with open(sidecar, "r", encoding="utf-8") as fh:
        return json.loads(fh.read())
