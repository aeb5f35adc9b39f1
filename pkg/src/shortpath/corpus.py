"""Dataset model, label normalization, and JSONL persistence.

The dataset schema (``dataset/v1``) is one JSON object per line::

    {"id": str, "question": str, "label": str, "pivots": [str]?, "meta": {str: str}?}

Keys are written in exactly that order, optional keys are omitted when
absent, and ``pivots`` is stored sorted, so re-saving a loaded dataset
reproduces the file byte for byte. The label space travels in a sidecar
``<path>.schema.json`` file alongside the data.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .errors import CorpusError
from .jsonl import read_jsonl, read_schema_sidecar, write_jsonl, write_schema_sidecar

DATASET_SCHEMA = "dataset/v1"

FREE_FORM = "free-form"

_WS = re.compile(r"\s+")

# Leading option letter with optional bracketing, e.g. "B", "b)", "(b)", "B.", "b:".
_MCQ_LETTER = re.compile(r"^[\(\[]?([a-z])[\)\].:]?(?:\s|$)")

_TRAILING_PUNCT = re.compile(r"[\s.,;:!?]+$")


@dataclass(frozen=True)
class Label:
    """A canonical answer string; equality is only meaningful post-normalization."""

    value: str


@dataclass(frozen=True)
class LabelSpace:
    """Either a declared finite answer set (MCQ) or a free-form marker."""

    options: tuple[str, ...] | None

    @classmethod
    def mcq(cls, options: Iterable[str]) -> "LabelSpace":
        opts = tuple(options)
        if not opts:
            raise ValueError("MCQ label space needs at least one option")
        if len(set(o.lower() for o in opts)) != len(opts):
            raise ValueError("MCQ options must be unique up to case")
        return cls(options=opts)

    @classmethod
    def free_form(cls) -> "LabelSpace":
        return cls(options=None)

    @property
    def is_free_form(self) -> bool:
        return self.options is None

    def contains(self, label: Label) -> bool:
        if self.is_free_form:
            return True
        return label.value in self.options  # type: ignore[operator]

    def to_json(self) -> Any:
        return FREE_FORM if self.is_free_form else list(self.options)  # type: ignore[arg-type]

    @classmethod
    def from_json(cls, value: Any) -> "LabelSpace":
        if value == FREE_FORM:
            return cls.free_form()
        if isinstance(value, list):
            return cls.mcq(value)
        raise CorpusError(f"invalid label_space value: {value!r}")


def normalize_label(raw: str, label_space: LabelSpace) -> Label | None:
    """Map raw model text to a canonical label, or ``None`` when unparseable.

    Finite (MCQ) spaces accept the option itself in any case, or a leading
    option letter such as ``"B)"`` or ``"(b)"``. Free-form spaces lowercase,
    trim, collapse internal whitespace, and strip trailing punctuation. An
    unparseable result never compares equal to any gold label downstream.
    """
    text = _WS.sub(" ", raw.strip().lower())
    if label_space.is_free_form:
        text = _TRAILING_PUNCT.sub("", text)
        return Label(text) if text else None

    options = label_space.options or ()
    by_lower = {opt.lower(): opt for opt in options}
    if text in by_lower:
        return Label(by_lower[text])
    match = _MCQ_LETTER.match(text)
    if match and match.group(1) in by_lower:
        return Label(by_lower[match.group(1)])
    return None


def labels_match(predicted: Label | None, gold: Label, label_space: LabelSpace) -> bool:
    """Equality test used for every correctness decision; unparseable never matches."""
    if predicted is None:
        return False
    gold_norm = normalize_label(gold.value, label_space)
    pred_norm = normalize_label(predicted.value, label_space)
    return pred_norm is not None and pred_norm == gold_norm


def normalize_pivot(raw: str) -> str:
    """Pivot string identity: lowercase, trim, collapse internal whitespace."""
    return _WS.sub(" ", raw.strip().lower())


def normalize_pivot_set(raw: Iterable[str]) -> frozenset[str]:
    out = {normalize_pivot(p) for p in raw}
    out.discard("")
    return frozenset(out)


@dataclass(frozen=True)
class Example:
    """One supervised question with its gold label and optional pivot annotations."""

    id: str
    question: str
    gold_label: Label
    pivot_annotations: frozenset[str] | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.pivot_annotations is not None and not self.pivot_annotations:
            raise CorpusError(f"example {self.id!r}: pivot annotations present but empty")


@dataclass
class Dataset:
    """An ordered, immutable-by-convention collection of examples.

    Safe to share read-only across parallel workers; writers are single-owner.
    """

    label_space: LabelSpace
    examples: list[Example]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for ex in self.examples:
            if ex.id in seen:
                raise CorpusError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)
            if not self.label_space.contains(ex.gold_label):
                raise CorpusError(
                    f"example {ex.id!r}: label {ex.gold_label.value!r} outside declared label space"
                )

    def __len__(self) -> int:
        return len(self.examples)

    def by_id(self, example_id: str) -> Example:
        for ex in self.examples:
            if ex.id == example_id:
                return ex
        raise KeyError(example_id)


def _example_to_record(ex: Example) -> dict[str, Any]:
    record: dict[str, Any] = {"id": ex.id, "question": ex.question, "label": ex.gold_label.value}
    if ex.pivot_annotations is not None:
        record["pivots"] = sorted(ex.pivot_annotations)
    if ex.metadata:
        record["meta"] = {k: ex.metadata[k] for k in sorted(ex.metadata)}
    return record


def _record_to_example(record: dict[str, Any], lineno: int, path: str | Path) -> Example:
    for key in ("id", "question", "label"):
        if key not in record:
            raise CorpusError(f"{path}: line {lineno}: record missing {key!r}")
        if not isinstance(record[key], str):
            raise CorpusError(f"{path}: line {lineno}: field {key!r} must be a string")
    pivots = None
    if "pivots" in record:
        raw = record["pivots"]
        if not isinstance(raw, list) or not all(isinstance(p, str) for p in raw):
            raise CorpusError(f"{path}: line {lineno}: 'pivots' must be a list of strings")
        pivots = normalize_pivot_set(raw)
        if not pivots:
            raise CorpusError(f"{path}: line {lineno}: 'pivots' normalizes to an empty set")
    meta = record.get("meta", {})
    if not isinstance(meta, dict):
        raise CorpusError(f"{path}: line {lineno}: 'meta' must be an object")
    return Example(
        id=record["id"],
        question=record["question"],
        gold_label=Label(record["label"]),
        pivot_annotations=pivots,
        metadata={str(k): str(v) for k, v in meta.items()},
    )


def load_dataset(
    path: str | Path,
    schema: str = DATASET_SCHEMA,
    label_space: LabelSpace | None = None,
) -> Dataset:
    """Load a ``dataset/v1`` JSONL file; malformed records report line numbers.

    The label space comes from, in order: the ``label_space`` argument, the
    sidecar schema file, or a free-form default.
    """
    if schema != DATASET_SCHEMA:
        raise CorpusError(f"unsupported dataset schema {schema!r}")
    if label_space is None:
        sidecar = read_schema_sidecar(path)
        if sidecar is not None:
            if sidecar.get("schema") != DATASET_SCHEMA:
                raise CorpusError(f"{path}: sidecar declares schema {sidecar.get('schema')!r}")
            label_space = LabelSpace.from_json(sidecar.get("label_space", FREE_FORM))
        else:
            label_space = LabelSpace.free_form()
    examples = [_record_to_example(rec, lineno, path) for lineno, rec in read_jsonl(path)]
    dataset = Dataset(label_space=label_space, examples=examples)
    for ex in examples:
        if not label_space.is_free_form and normalize_label(ex.gold_label.value, label_space) is None:
            raise CorpusError(f"{path}: example {ex.id!r}: unparseable gold label {ex.gold_label.value!r}")
    return dataset


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset/v1`` JSONL deterministically, plus its schema sidecar."""
    write_jsonl(path, (_example_to_record(ex) for ex in dataset.examples))
    write_schema_sidecar(path, DATASET_SCHEMA, {"label_space": dataset.label_space.to_json()})
