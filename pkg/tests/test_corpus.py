import json

import pytest

from privqa.contexts import ParsedContext, SpecificContext
from privqa.corpus import (
    REFERENCE_SPLIT_SIZES,
    AugmentedInstance,
    Dataset,
    DatasetFormatError,
    QAInstance,
    ingest_records,
    load_augmented,
    load_dataset,
    plain_augmented,
    sample_fewshot,
    write_augmented,
    write_dataset,
)


def make_instance(i=0, n_choices=4):
    labels = "abcde"[:n_choices]
    return QAInstance(
        id=f"q{i}",
        question=f"question number {i}?",
        choices={label: f"choice {label}{i}" for label in labels},
        gold=labels[i % n_choices],
        meta={"dataset": "toy", "split": "train"},
    )


def make_dataset(n=6):
    return Dataset(name="toy", split="train", instances=tuple(make_instance(i) for i in range(n)))


def test_instance_validation():
    make_instance().validate()
    with pytest.raises(DatasetFormatError):
        QAInstance("x", "q", {"a": "1"}, "a").validate()  # too few choices
    with pytest.raises(DatasetFormatError):
        QAInstance("x", "q", {"a": "1", "c": "2"}, "a").validate()  # gap in labels
    with pytest.raises(DatasetFormatError):
        QAInstance("x", "q", {"b": "1", "c": "2"}, "b").validate()  # not from 'a'
    with pytest.raises(DatasetFormatError):
        QAInstance("x", "q", {"a": "1", "b": "2"}, "e").validate()  # gold not a choice


def test_dataset_round_trip(tmp_path):
    ds = make_dataset()
    path = tmp_path / "toy.jsonl"
    write_dataset(ds, path)
    loaded = load_dataset(path)
    assert loaded.name == "toy" and loaded.split == "train"
    assert loaded.instances == ds.instances


def test_load_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps(
        {"id": "q0", "question": "q", "choices": {"a": "1", "b": "2"}, "gold": "a"}
    )
    path.write_text(good + "\n{not json}\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match=r":2:"):
        load_dataset(path)


def test_load_rejects_duplicate_ids(tmp_path):
    path = tmp_path / "dup.jsonl"
    rec = json.dumps(
        {"id": "q0", "question": "q", "choices": {"a": "1", "b": "2"}, "gold": "a"}
    )
    path.write_text(rec + "\n" + rec + "\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match="duplicate id"):
        load_dataset(path)


def test_load_unknown_format(tmp_path):
    with pytest.raises(DatasetFormatError, match="unsupported load format"):
        load_dataset(tmp_path / "x.jsonl", format="csv")


def test_load_reference_scale(tmp_path):
    # Loader handles a file at the size of the largest published split.
    n = REFERENCE_SPLIT_SIZES["medqa"]["train"]
    path = tmp_path / "big.jsonl"
    with path.open("w", encoding="utf-8") as fh:
        for i in range(n):
            fh.write(
                json.dumps(
                    {
                        "id": f"q{i}",
                        "question": f"question {i}",
                        "choices": {"a": "1", "b": "2", "c": "3", "d": "4"},
                        "gold": "abcd"[i % 4],
                    }
                )
                + "\n"
            )
    assert len(load_dataset(path)) == 10178


def test_sample_fewshot():
    ds = make_dataset(20)
    sub = sample_fewshot(ds, 5, seed=3)
    assert len(sub) == 5
    ids = [inst.id for inst in sub.instances]
    all_ids = [inst.id for inst in ds.instances]
    assert sorted(ids, key=all_ids.index) == ids  # original order kept
    assert sample_fewshot(ds, 5, seed=3).instances == sub.instances
    assert sample_fewshot(ds, 5, seed=4).instances != sub.instances
    with pytest.raises(DatasetFormatError):
        sample_fewshot(ds, 21, seed=0)
    with pytest.raises(DatasetFormatError):
        sample_fewshot(ds, 0, seed=0)


def _context_for(inst, note="fact"):
    return ParsedContext(
        overall="Some overall text.",
        specific={
            label: SpecificContext(f"A {note} about {label}.", "It is related.")
            for label in inst.labels()
        },
        decision=frozenset(inst.gold),
        raw="raw text",
    )


def test_augmented_round_trip(tmp_path):
    items = []
    for i in range(4):
        inst = make_instance(i)
        items.append(AugmentedInstance(inst, _context_for(inst), f"gen{i}"))
    path = tmp_path / "aug.jsonl"
    write_augmented(items, path)
    loaded = load_augmented(path)
    assert len(loaded) == 4
    for orig, back in zip(items, loaded):
        assert back.instance == orig.instance
        assert back.context == orig.context
        assert back.generation_id == orig.generation_id
        assert back.context.raw == "raw text"


def test_augmented_validate_label_coverage():
    inst = make_instance(0)
    ctx = ParsedContext(
        overall="",
        specific={"a": SpecificContext("", ""), "b": SpecificContext("", "")},
        decision=frozenset(),
    )
    with pytest.raises(DatasetFormatError, match="q0"):
        AugmentedInstance(inst, ctx, "g").validate()


def test_plain_augmented():
    aug = plain_augmented(make_instance(2))
    aug.validate()
    assert set(aug.context.specific) == set(aug.instance.labels())
    assert aug.context.overall == ""
    assert aug.context.decision == frozenset()


def test_ingest_medqa(tmp_path):
    path = tmp_path / "src.jsonl"
    rec = {
        "question": "What is it?",
        "options": {"A": "one", "B": "two", "C": "three", "D": "four"},
        "answer_idx": "C",
    }
    path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    ds = ingest_records(path, "medqa", "medqa", "dev")
    inst = ds.instances[0]
    assert inst.choices == {"a": "one", "b": "two", "c": "three", "d": "four"}
    assert inst.gold == "c"
    assert inst.meta["dataset"] == "medqa" and inst.meta["split"] == "dev"


def test_ingest_medmcqa(tmp_path):
    path = tmp_path / "src.jsonl"
    rec = {"question": "Pick.", "opa": "w", "opb": "x", "opc": "y", "opd": "z", "cop": 1}
    path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    ds = ingest_records(path, "medmcqa", "medmcqa", "train")
    assert ds.instances[0].gold == "b"


def test_ingest_arc(tmp_path):
    path = tmp_path / "src.jsonl"
    rec = {
        "id": "x1",
        "question": {
            "stem": "Which?",
            "choices": [
                {"label": "A", "text": "p"},
                {"label": "B", "text": "q"},
                {"label": "C", "text": "r"},
                {"label": "D", "text": "s"},
            ],
        },
        "answerKey": "D",
    }
    path.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    ds = ingest_records(path, "arc", "obqa", "test")
    assert ds.instances[0].gold == "d"
    assert ds.instances[0].question == "Which?"


def test_ingest_bad_record_names_line(tmp_path):
    path = tmp_path / "src.jsonl"
    path.write_text(json.dumps({"question": "no options"}) + "\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match=r":1:"):
        ingest_records(path, "medqa", "medqa", "dev")


def test_ingest_unknown_format(tmp_path):
    path = tmp_path / "src.jsonl"
    path.write_text("{}\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match="unknown ingest format"):
        ingest_records(path, "mystery", "x", "y")
