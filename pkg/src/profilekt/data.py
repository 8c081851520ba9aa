"""Interaction log ingest, sequence construction, difficulty, segmentation and splitting."""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

HEADER = ("student_id", "question_id", "kc_ids", "correct", "timestamp")
WINDOW_SIZE = 50
MIN_WINDOW = 5
DEFAULT_DIFFICULTY = 0.5


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    student_id: str
    question_id: str
    kc_ids: tuple[str, ...]
    correct: bool
    timestamp: int
    difficulty: float | None = None

    def __post_init__(self):
        if not self.kc_ids:
            raise ValueError("kc_ids must be non-empty")
        if len(set(self.kc_ids)) != len(self.kc_ids):
            raise ValueError(f"duplicate kc_ids: {self.kc_ids}")
        if self.difficulty is not None and not 0.0 <= self.difficulty <= 1.0:
            raise ValueError(f"difficulty out of range: {self.difficulty}")

    def key(self) -> tuple:
        return (self.student_id, self.question_id, self.kc_ids, self.correct, self.timestamp)

    def to_dict(self) -> dict:
        return {
            "student_id": self.student_id,
            "question_id": self.question_id,
            "kc_ids": list(self.kc_ids),
            "correct": self.correct,
            "timestamp": self.timestamp,
            "difficulty": self.difficulty,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionRecord":
        return cls(
            student_id=d["student_id"],
            question_id=d["question_id"],
            kc_ids=tuple(d["kc_ids"]),
            correct=bool(d["correct"]),
            timestamp=int(d["timestamp"]),
            difficulty=d.get("difficulty"),
        )


@dataclass
class StudentSequence:
    student_id: str
    records: list[InteractionRecord]

    def __post_init__(self):
        for prev, cur in zip(self.records, self.records[1:]):
            if cur.timestamp < prev.timestamp:
                raise ValueError(f"records of {self.student_id} are not chronological")
        if any(r.student_id != self.student_id for r in self.records):
            raise ValueError("all records must share the sequence's student_id")


@dataclass
class SequenceWindow:
    student_id: str
    window_index: int
    records: list[InteractionRecord]

    @property
    def window_id(self) -> str:
        return f"{self.student_id}#{self.window_index}"

    def to_dict(self) -> dict:
        return {
            "student_id": self.student_id,
            "window_index": self.window_index,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceWindow":
        return cls(d["student_id"], int(d["window_index"]),
                   [InteractionRecord.from_dict(r) for r in d["records"]])


@dataclass
class DatasetSplit:
    train: list[SequenceWindow]
    validation: list[SequenceWindow]
    test: list[SequenceWindow]
    seed: int
    difficulty: dict[str, float] = field(default_factory=dict)

    def parts(self) -> dict[str, list[SequenceWindow]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass
class ParseResult:
    records: list[InteractionRecord]
    dropped: int


def _parse_row(row: dict) -> InteractionRecord | None:
    sid = (row.get("student_id") or "").strip()
    qid = (row.get("question_id") or "").strip()
    kcs_raw = (row.get("kc_ids") or "").strip()
    correct = (row.get("correct") or "").strip()
    ts = (row.get("timestamp") or "").strip()
    if not sid or not qid or not kcs_raw or correct not in ("0", "1"):
        return None
    kcs = tuple(dict.fromkeys(k.strip() for k in kcs_raw.split(";") if k.strip()))
    if not kcs:
        return None
    try:
        timestamp = int(ts)
    except ValueError:
        return None
    return InteractionRecord(sid, qid, kcs, correct == "1", timestamp)


def parse_interactions(source: TextIO | str) -> ParseResult:
    """Read the canonical CSV, dropping invalid rows and exact duplicates.

    Duplicates are judged on the five parsed fields; the first occurrence is kept.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    if reader.fieldnames is None or tuple(h.strip() for h in reader.fieldnames) != HEADER:
        raise ParseError(f"expected header {','.join(HEADER)}, got {reader.fieldnames}")
    reader.fieldnames = list(HEADER)
    records: list[InteractionRecord] = []
    seen: set[tuple] = set()
    dropped = 0
    for row in reader:
        rec = _parse_row(row)
        if rec is None or rec.key() in seen:
            dropped += 1
            continue
        seen.add(rec.key())
        records.append(rec)
    return ParseResult(records, dropped)


def write_interactions(records: Iterable[InteractionRecord], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HEADER)
    for r in records:
        writer.writerow([r.student_id, r.question_id, ";".join(r.kc_ids), int(r.correct), r.timestamp])


def build_sequences(records: Iterable[InteractionRecord]) -> list[StudentSequence]:
    """Group by student (sorted by id) and order each group by timestamp; ties keep input order."""
    groups: dict[str, list[InteractionRecord]] = defaultdict(list)
    for r in records:
        groups[r.student_id].append(r)
    return [StudentSequence(sid, sorted(groups[sid], key=lambda r: r.timestamp)) for sid in sorted(groups)]


def compute_difficulty(train_records: Iterable[InteractionRecord]) -> dict[str, float]:
    totals: dict[str, int] = defaultdict(int)
    hits: dict[str, int] = defaultdict(int)
    for r in train_records:
        totals[r.question_id] += 1
        hits[r.question_id] += int(r.correct)
    return {q: 1.0 - hits[q] / totals[q] for q in sorted(totals)}


def lookup_difficulty(difficulty: dict[str, float], question_id: str) -> float:
    return difficulty.get(question_id, DEFAULT_DIFFICULTY)


def segment_and_filter(sequences: Iterable[StudentSequence], size: int = WINDOW_SIZE,
                       min_len: int = MIN_WINDOW) -> list[SequenceWindow]:
    windows = []
    for seq in sequences:
        index = 0
        for start in range(0, len(seq.records), size):
            chunk = seq.records[start:start + size]
            if len(chunk) >= min_len:
                windows.append(SequenceWindow(seq.student_id, index, list(chunk)))
                index += 1
    return windows


def split_dataset(windows: list[SequenceWindow], seed: int) -> DatasetSplit:
    n = len(windows)
    if n < 10:
        raise ValueError(f"need at least 10 windows to split 8:1:1, got {n}")
    ordered = sorted(windows, key=lambda w: (w.student_id, w.window_index))
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ordered[i] for i in perm]
    n_train, n_val = (8 * n) // 10, n // 10
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        seed=seed,
    )


def assign_difficulty(split: DatasetSplit) -> DatasetSplit:
    """Compute difficulty from the training windows and stamp it on every record."""
    table = compute_difficulty(r for w in split.train for r in w.records)

    def stamp(ws: list[SequenceWindow]) -> list[SequenceWindow]:
        return [SequenceWindow(w.student_id, w.window_index,
                               [replace(r, difficulty=lookup_difficulty(table, r.question_id))
                                for r in w.records]) for w in ws]

    return DatasetSplit(stamp(split.train), stamp(split.validation), stamp(split.test),
                        split.seed, table)


def preprocess(source: TextIO | str, seed: int) -> tuple[DatasetSplit, int]:
    """Parse, sequence, segment, split and attach training-set difficulty."""
    parsed = parse_interactions(source)
    windows = segment_and_filter(build_sequences(parsed.records))
    return assign_difficulty(split_dataset(windows, seed)), parsed.dropped


def write_split(split: DatasetSplit, out_dir: Path) -> dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, ws in split.parts().items():
        path = out_dir / f"{name}.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for w in ws:
                fh.write(json.dumps(w.to_dict(), sort_keys=True) + "\n")
        paths[name] = path
    meta = {"seed": split.seed, "difficulty": split.difficulty}
    (out_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return paths


def read_split(in_dir: Path) -> DatasetSplit:
    parts = {}
    for name in ("train", "validation", "test"):
        with (in_dir / f"{name}.jsonl").open(encoding="utf-8") as fh:
            parts[name] = [SequenceWindow.from_dict(json.loads(line)) for line in fh if line.strip()]
    meta = json.loads((in_dir / "meta.json").read_text(encoding="utf-8"))
    return DatasetSplit(parts["train"], parts["validation"], parts["test"], meta["seed"], meta["difficulty"])
