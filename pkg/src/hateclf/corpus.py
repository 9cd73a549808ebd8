"""Dataset ingestion, merging, class statistics and the stratified split."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ClassTooSmall, EmptyFile, MalformedRow, SchemeMismatch, UnknownLabel
from .reference import PUBLISHED_SPLIT_COUNTS, PUBLISHED_SPLIT_DISCREPANCIES, SPLIT_COUNT_TOLERANCE

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class LabelScheme:
    name: str
    classes: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("classes must be distinct")

    def index(self, label: str) -> int:
        return self.classes.index(label)


WASEEM = LabelScheme("waseem", ("racism", "sexism", "neither"))
DAVIDSON = LabelScheme("davidson", ("hate", "offensive", "neither"))
SCHEMES = {s.name: s for s in (WASEEM, DAVIDSON)}

DAVIDSON_CODES = {0: "hate", 1: "offensive", 2: "neither"}


@dataclass(frozen=True)
class TweetRecord:
    id: str
    raw_text: str
    label: int
    normalized_text: str = ""
    source: str = ""


@dataclass(frozen=True)
class Corpus:
    scheme: LabelScheme
    records: tuple[TweetRecord, ...] = ()
    # loader / merge bookkeeping: dropped_rows, duplicate_ids, label_conflicts
    notes: Mapping[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if not 0 <= r.label < len(self.scheme.classes):
                raise UnknownLabel(f"label index {r.label} outside scheme {self.scheme.name}")
            if r.id in seen:
                raise ValueError(f"duplicate record id {r.id!r}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def label_name(self, record: TweetRecord) -> str:
        return self.scheme.classes[record.label]

    def by_id(self) -> dict[str, TweetRecord]:
        return {r.id: r for r in self.records}

    def subset(self, ids: Iterable[str]) -> "Corpus":
        index = self.by_id()
        return Corpus(self.scheme, tuple(index[i] for i in ids))

    def normalized(self, cfg=None) -> "Corpus":
        from .text_prep import normalize

        recs = tuple(replace(r, normalized_text=normalize(r.raw_text, cfg).text) for r in self.records)
        return Corpus(self.scheme, recs, dict(self.notes))


@dataclass(frozen=True)
class ColumnConfig:
    """CSV column names.  ``id_col`` may be absent from the file, in which case
    the zero-based data row index becomes the id."""

    id_col: Optional[str] = "id"
    text_col: str = "text"
    label_col: str = "label"
    class_code_col: str = "class"

    @classmethod
    def from_dict(cls, d: Optional[Mapping], **defaults) -> "ColumnConfig":
        merged = {**defaults, **{k: v for k, v in (d or {}).items() if k in cls.__dataclass_fields__}}
        return cls(**merged)


WASEEM_COLUMNS = ColumnConfig()
DAVIDSON_COLUMNS = ColumnConfig(id_col="", text_col="tweet", class_code_col="class")


def _read_rows(path: str | Path, required: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path}: file is empty")
        for col in required:
            if col not in header:
                raise MalformedRow(f"{path}: missing column {col!r} (header: {header})")
        for row_idx, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(
                    f"{path}: row {reader.line_num} has {len(row)} columns, expected {len(header)}"
                )
            yield row_idx, reader.line_num, dict(zip(header, row))


def _build(scheme: LabelScheme, rows, source) -> Corpus:
    records, seen = [], set()
    notes = {"dropped_rows": 0, "duplicate_ids": 0}
    for row_idx, rid, text, label in rows:
        if label is None:
            notes["dropped_rows"] += 1
            continue
        rid = rid if rid else str(row_idx)
        if rid in seen:
            notes["duplicate_ids"] += 1
            continue
        seen.add(rid)
        records.append(TweetRecord(id=rid, raw_text=text, label=label, source=source))
    if notes["dropped_rows"]:
        log.info("%s: dropped %d rows", source, notes["dropped_rows"])
    if notes["duplicate_ids"]:
        log.warning("%s: skipped %d duplicate ids", source, notes["duplicate_ids"])
    return Corpus(scheme, tuple(records), notes)


def load_waseem(path: str | Path, variant: str = "hovy16", columns: ColumnConfig = WASEEM_COLUMNS) -> Corpus:
    """Load a Waseem-family CSV.  Labels are matched case-insensitively and
    rows labelled ``both`` are dropped (counted in ``notes['dropped_rows']``)."""
    if variant not in ("hovy16", "waseem16"):
        raise ValueError(f"unknown Waseem variant {variant!r}")

    def rows():
        for row_idx, line, row in _read_rows(path, [columns.text_col, columns.label_col]):
            label = row[columns.label_col].strip().lower()
            if label == "both":
                idx = None
            elif label in WASEEM.classes:
                idx = WASEEM.index(label)
            else:
                raise UnknownLabel(f"{path}: row {line}: label {row[columns.label_col]!r}")
            yield row_idx, row.get(columns.id_col or "", ""), row[columns.text_col], idx

    return _build(WASEEM, rows(), variant)


def load_davidson(path: str | Path, columns: ColumnConfig = DAVIDSON_COLUMNS) -> Corpus:
    def rows():
        for row_idx, line, row in _read_rows(path, [columns.text_col, columns.class_code_col]):
            raw = row[columns.class_code_col].strip()
            try:
                code = int(raw)
            except ValueError:
                raise UnknownLabel(f"{path}: row {line}: class code {raw!r}") from None
            if code not in DAVIDSON_CODES:
                raise UnknownLabel(f"{path}: row {line}: class code {code}")
            yield row_idx, row.get(columns.id_col or "", ""), row[columns.text_col], DAVIDSON.index(
                DAVIDSON_CODES[code]
            )

    return _build(DAVIDSON, rows(), "davidson")


def merge_corpora(a: Corpus, b: Corpus) -> Corpus:
    """Union of two corpora.  On a shared id the record from ``a`` wins; shared
    ids whose labels disagree are counted in ``notes['label_conflicts']``."""
    if a.scheme != b.scheme:
        raise SchemeMismatch(f"cannot merge {a.scheme.name} with {b.scheme.name}")
    index = a.by_id()
    records = list(a.records)
    duplicates = conflicts = 0
    for r in b.records:
        first = index.get(r.id)
        if first is None:
            records.append(r)
            continue
        duplicates += 1
        if first.label != r.label:
            conflicts += 1
            log.warning("merge: id %s labelled %s vs %s; keeping first", r.id, first.label, r.label)
    notes = {"merged_duplicates": duplicates, "label_conflicts": conflicts}
    return Corpus(a.scheme, tuple(records), notes)


def class_counts(c: Corpus) -> list[int]:
    counts = [0] * len(c.scheme.classes)
    for r in c.records:
        counts[r.label] += 1
    return counts


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError("ratios must be three positive numbers")
        if not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-9):
            raise ValueError(f"ratios must sum to 1, got {sum(self.ratios)}")


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor for validation and test, remainder to train."""
    # tolerance guards products such as 0.1 * 30 landing just below an integer
    val = math.floor(ratios[1] * n + 1e-9)
    test = math.floor(ratios[2] * n + 1e-9)
    return n - val - test, val, test


def stratified_split(c: Corpus, spec: SplitSpec = SplitSpec()) -> tuple[Corpus, Corpus, Corpus]:
    by_class: list[list[TweetRecord]] = [[] for _ in c.scheme.classes]
    for r in sorted(c.records, key=lambda r: r.id):
        by_class[r.label].append(r)

    parts: list[list[TweetRecord]] = [[], [], []]
    for k, members in enumerate(by_class):
        n = len(members)
        if n == 0:
            continue
        if n < 3:
            raise ClassTooSmall(f"class {c.scheme.classes[k]!r} has {n} records; need >= 3")
        order = np.random.default_rng([spec.seed, k]).permutation(n)
        shuffled = [members[i] for i in order]
        n_train, n_val, _ = split_sizes(n, spec.ratios)
        parts[0].extend(shuffled[:n_train])
        parts[1].extend(shuffled[n_train:n_train + n_val])
        parts[2].extend(shuffled[n_train + n_val:])

    out = []
    for s, recs in enumerate(parts):
        order = np.random.default_rng([spec.seed, len(by_class) + s]).permutation(len(recs))
        out.append(Corpus(c.scheme, tuple(recs[i] for i in order)))
    return tuple(out)


def synthetic_corpus(scheme: LabelScheme, counts: Sequence[int]) -> Corpus:
    """Labelled dummy records with the given per-class totals."""
    records = []
    for k, n in enumerate(counts):
        records.extend(
            TweetRecord(id=f"{scheme.classes[k]}-{i:06d}", raw_text="", label=k) for i in range(n)
        )
    return Corpus(scheme, tuple(records))


def write_manifest(path: str | Path, splits: Mapping[str, Corpus]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "split", "label"])
        for name, corpus in splits.items():
            for r in corpus.records:
                w.writerow([r.id, name, corpus.label_name(r)])


def read_manifest(path: str | Path) -> list[tuple[str, str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "split", "label"} <= set(reader.fieldnames):
            raise MalformedRow(f"{path}: manifest needs columns id, split, label")
        return [(row["id"], row["split"], row["label"]) for row in reader]


@dataclass(frozen=True)
class CellCheck:
    split: str
    label: str
    got: int
    expected: int
    status: str  # "match", "mismatch" or "flagged"

    @property
    def delta(self) -> int:
        return self.got - self.expected


def compare_to_published_splits(scheme: LabelScheme, split_counts: Mapping[str, Sequence[int]]) -> list[CellCheck]:
    """Check per-split class counts against the published table.  Cells listed
    as known discrepancies are reported as ``flagged`` whatever their value."""
    ref = PUBLISHED_SPLIT_COUNTS[scheme.name]
    checks = []
    for split in SPLITS:
        for k, label in enumerate(scheme.classes):
            got, expected = split_counts[split][k], ref[split][k]
            if (scheme.name, split, label) in PUBLISHED_SPLIT_DISCREPANCIES:
                status = "flagged"
            elif abs(got - expected) <= SPLIT_COUNT_TOLERANCE:
                status = "match"
            else:
                status = "mismatch"
            checks.append(CellCheck(split, label, got, expected, status))
    return checks


def format_distribution(scheme: LabelScheme, split_counts: Mapping[str, Sequence[int]]) -> str:
    """Class-distribution table: one row per split plus a totals row."""
    width = max(10, *(len(c) + 2 for c in scheme.classes))
    head = f"{'':<12}" + "".join(f"{c.capitalize():>{width}}" for c in scheme.classes) + f"{'Total':>{width}}"
    lines = [head]
    totals = [0] * len(scheme.classes)
    for split in SPLITS:
        row = list(split_counts[split])
        totals = [t + r for t, r in zip(totals, row)]
        lines.append(f"{split.capitalize():<12}" + "".join(f"{v:>{width}}" for v in row) + f"{sum(row):>{width}}")
    lines.append(f"{'Total':<12}" + "".join(f"{v:>{width}}" for v in totals))
    return "\n".join(lines)
