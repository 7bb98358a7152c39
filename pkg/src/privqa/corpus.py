"""Canonical multiple-choice corpora and their context-augmented variants.

The on-disk format is line-delimited JSON, one instance per line:

    {"id": ..., "question": ..., "choices": {"a": ..., "b": ...},
     "gold": "a", "meta": {...}}

Adapters normalize common source layouts (MedQA-style, MedMCQA-style,
ARC-style) into this schema; everything downstream reads only the canonical
form. Augmented files carry the same instance plus its parsed context.
"""

from __future__ import annotations

import json
import random
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from privqa.contexts import ParsedContext, SpecificContext

LABELS = ("a", "b", "c", "d", "e")
MIN_CHOICES = 2
MAX_CHOICES = 5

# Published split sizes, kept for documentation and ingest sanity checks only.
REFERENCE_SPLIT_SIZES = {
    "medqa": {"train": 10178, "dev": 1272, "test": 1273},
}


class DatasetFormatError(Exception):
    """A dataset or augmented file violates the canonical schema."""


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class QAInstance:
    """One multiple-choice question with gold label and free-form metadata."""

    id: str
    question: str
    choices: dict[str, str]
    gold: str
    meta: dict[str, str] = field(default_factory=dict)

    def labels(self) -> tuple[str, ...]:
        return tuple(self.choices)

    def validate(self) -> None:
        n = len(self.choices)
        if not MIN_CHOICES <= n <= MAX_CHOICES:
            raise DatasetFormatError(f"instance {self.id!r}: {n} choices, need 2..5")
        expected = LABELS[:n]
        if tuple(self.choices) != expected:
            raise DatasetFormatError(
                f"instance {self.id!r}: labels {tuple(self.choices)} not consecutive from 'a'"
            )
        if self.gold not in self.choices:
            raise DatasetFormatError(f"instance {self.id!r}: gold {self.gold!r} not a choice label")


@dataclass(frozen=True)
class Dataset:
    name: str
    split: str
    instances: tuple[QAInstance, ...]

    def __len__(self) -> int:
        return len(self.instances)

    def by_id(self) -> dict[str, QAInstance]:
        return {inst.id: inst for inst in self.instances}


@dataclass(frozen=True)
class AugmentedInstance:
    """An instance joined with the context parsed from one LLM generation."""

    instance: QAInstance
    context: ParsedContext
    generation_id: str

    def validate(self) -> None:
        self.instance.validate()
        want = set(self.instance.labels())
        got = set(self.context.specific)
        if want != got:
            raise DatasetFormatError(
                f"instance {self.instance.id!r}: specific contexts cover {sorted(got)}, "
                f"choices are {sorted(want)}"
            )


def _instance_from_record(rec: dict[str, Any]) -> QAInstance:
    for key in ("id", "question", "choices", "gold"):
        if key not in rec:
            raise DatasetFormatError(f"missing field {key!r}")
    choices = rec["choices"]
    if not isinstance(choices, dict) or not all(isinstance(v, str) for v in choices.values()):
        raise DatasetFormatError("choices must map labels to strings")
    inst = QAInstance(
        id=str(rec["id"]),
        question=nfc(str(rec["question"])),
        choices={str(k): nfc(str(v)) for k, v in sorted(choices.items())},
        gold=str(rec["gold"]),
        meta={str(k): str(v) for k, v in rec.get("meta", {}).items()},
    )
    inst.validate()
    return inst


def _instance_to_record(inst: QAInstance) -> dict[str, Any]:
    return {
        "id": inst.id,
        "question": inst.question,
        "choices": dict(inst.choices),
        "gold": inst.gold,
        "meta": dict(inst.meta),
    }


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict[str, Any]]]:
    p = Path(path)
    if not p.exists():
        raise DatasetFormatError(f"dataset file not found: {p}")
    with p.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{p}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DatasetFormatError(f"{p}:{lineno}: record is not an object")
            yield lineno, rec


def load_dataset(path: str | Path, format: str = "canonical-jsonl") -> Dataset:
    """Load a canonical dataset file, validating every record.

    Schema violations are reported with their line number; duplicate ids are
    rejected. `format` exists so callers can be explicit; only the canonical
    layout is accepted here (use `ingest_records` for source layouts).
    """
    if format != "canonical-jsonl":
        raise DatasetFormatError(f"unsupported load format {format!r}; ingest source files first")
    p = Path(path)
    instances: list[QAInstance] = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(p):
        try:
            inst = _instance_from_record(rec)
        except DatasetFormatError as exc:
            raise DatasetFormatError(f"{p}:{lineno}: {exc}") from exc
        if inst.id in seen:
            raise DatasetFormatError(f"{p}:{lineno}: duplicate id {inst.id!r}")
        seen.add(inst.id)
        instances.append(inst)
    meta = instances[0].meta if instances else {}
    return Dataset(
        name=meta.get("dataset", p.stem),
        split=meta.get("split", "unknown"),
        instances=tuple(instances),
    )


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in dataset.instances:
            fh.write(json.dumps(_instance_to_record(inst), ensure_ascii=False) + "\n")


def sample_fewshot(dataset: Dataset, size: int, seed: int) -> Dataset:
    """Uniform subset without replacement, kept in original dataset order."""
    n = len(dataset.instances)
    if not 0 < size <= n:
        raise DatasetFormatError(f"fewshot size {size} out of range for {n} instances")
    rng = random.Random(seed)
    picked = sorted(rng.sample(range(n), size))
    return replace(dataset, instances=tuple(dataset.instances[i] for i in picked))


# ---------------------------------------------------------------------------
# Augmented corpora


def _context_to_record(ctx: ParsedContext) -> dict[str, Any]:
    return {
        "overall": ctx.overall,
        "specific": {
            label: {"knowledge": sc.knowledge, "relation": sc.relation}
            for label, sc in ctx.specific.items()
        },
        "decision": sorted(ctx.decision),
        "raw": ctx.raw,
    }


def _context_from_record(rec: dict[str, Any]) -> ParsedContext:
    specific = {
        str(label): SpecificContext(
            knowledge=str(block.get("knowledge", "")),
            relation=str(block.get("relation", "")),
        )
        for label, block in sorted(rec.get("specific", {}).items())
    }
    return ParsedContext(
        overall=str(rec.get("overall", "")),
        specific=specific,
        decision=frozenset(str(x) for x in rec.get("decision", [])),
        raw=str(rec.get("raw", "")),
    )


def write_augmented(augmented: Iterable[AugmentedInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for aug in augmented:
            rec = {
                "id": aug.instance.id,
                "generation_id": aug.generation_id,
                "instance": _instance_to_record(aug.instance),
                "context": _context_to_record(aug.context),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_augmented(path: str | Path) -> list[AugmentedInstance]:
    """Load an augmented file; every record must cover each choice label."""
    out: list[AugmentedInstance] = []
    p = Path(path)
    for lineno, rec in _read_jsonl(p):
        try:
            inst = _instance_from_record(rec.get("instance", {}))
            aug = AugmentedInstance(
                instance=inst,
                context=_context_from_record(rec.get("context", {})),
                generation_id=str(rec.get("generation_id", "")),
            )
            aug.validate()
        except DatasetFormatError as exc:
            raise DatasetFormatError(f"{p}:{lineno}: {exc}") from exc
        out.append(aug)
    return out


def plain_augmented(instance: QAInstance) -> AugmentedInstance:
    """Wrap an instance with an empty context, for context-free scoring paths."""
    ctx = ParsedContext(
        overall="",
        specific={label: SpecificContext("", "") for label in instance.labels()},
        decision=frozenset(),
        raw="",
    )
    return AugmentedInstance(instance=instance, context=ctx, generation_id="")


# ---------------------------------------------------------------------------
# Source-format adapters

INGEST_FORMATS = ("canonical-jsonl", "medqa", "medmcqa", "arc")


def _adapt_medqa(rec: dict[str, Any], idx: int) -> dict[str, Any]:
    # {"question", "options": {"A": ..}, "answer_idx": "A"}
    options = rec["options"]
    ordered = sorted(options.items())
    choices = {LABELS[i]: str(text) for i, (_, text) in enumerate(ordered)}
    gold_pos = [k for k, _ in ordered].index(rec["answer_idx"])
    return {
        "id": rec.get("id", f"medqa-{idx}"),
        "question": rec["question"],
        "choices": choices,
        "gold": LABELS[gold_pos],
        "meta": rec.get("meta", {}),
    }


def _adapt_medmcqa(rec: dict[str, Any], idx: int) -> dict[str, Any]:
    # {"question", "opa".."opd", "cop": 0-based index}
    choices = {
        "a": str(rec["opa"]),
        "b": str(rec["opb"]),
        "c": str(rec["opc"]),
        "d": str(rec["opd"]),
    }
    return {
        "id": rec.get("id", f"medmcqa-{idx}"),
        "question": rec["question"],
        "choices": choices,
        "gold": LABELS[int(rec["cop"])],
        "meta": rec.get("meta", {}),
    }


def _adapt_arc(rec: dict[str, Any], idx: int) -> dict[str, Any]:
    # {"id", "question": {"stem", "choices": [{"label", "text"}]}, "answerKey"}
    q = rec["question"]
    listed = q["choices"]
    labels = [str(c["label"]) for c in listed]
    choices = {LABELS[i]: str(c["text"]) for i, c in enumerate(listed)}
    gold_pos = labels.index(str(rec["answerKey"]))
    return {
        "id": rec.get("id", f"arc-{idx}"),
        "question": q["stem"],
        "choices": choices,
        "gold": LABELS[gold_pos],
        "meta": rec.get("meta", {}),
    }


_ADAPTERS = {"medqa": _adapt_medqa, "medmcqa": _adapt_medmcqa, "arc": _adapt_arc}


def ingest_records(
    path: str | Path,
    format: str,
    dataset_name: str,
    split: str,
) -> Dataset:
    """Convert a source-format file into a validated canonical Dataset."""
    if format == "canonical-jsonl":
        return load_dataset(path)
    adapter = _ADAPTERS.get(format)
    if adapter is None:
        raise DatasetFormatError(f"unknown ingest format {format!r}; known: {INGEST_FORMATS}")
    p = Path(path)
    instances: list[QAInstance] = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(p):
        try:
            canon = adapter(rec, lineno)
        except (KeyError, ValueError, IndexError, TypeError) as exc:
            raise DatasetFormatError(f"{p}:{lineno}: not a {format} record ({exc})") from exc
        canon.setdefault("meta", {})
        canon["meta"] = {**canon["meta"], "dataset": dataset_name, "split": split}
        try:
            inst = _instance_from_record(canon)
        except DatasetFormatError as exc:
            raise DatasetFormatError(f"{p}:{lineno}: {exc}") from exc
        if inst.id in seen:
            raise DatasetFormatError(f"{p}:{lineno}: duplicate id {inst.id!r}")
        seen.add(inst.id)
        instances.append(inst)
    return Dataset(name=dataset_name, split=split, instances=tuple(instances))
