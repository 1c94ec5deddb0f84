"""Dataset types and file I/O for the three tasks.

Task kinds:

* "A" (validation): pairs of statements, one of which is against common
  sense; the label is the index of the nonsense statement.
* "B" (explanation): a false statement plus three candidate reasons; the
  label is the index of the correct reason.
* "C" (generation): a false statement plus up to three reference reasons.

Data files are comma-separated with a header row. Label/reference files are
headerless ``id,value`` rows (``id,ref1[,ref2,ref3]`` for task C) because
reference counts vary per example. Fields containing the delimiter must be
quoted; embedded quotes are doubled (standard csv quoting).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from statistics import mean
from typing import Sequence, Union

from .exceptions import DatasetError
from .text import tokenize_reference
from .validation import check_index, check_text

DATASET_KINDS = ("A", "B", "C")

_DATA_COLUMNS = {
    "A": ("id", "sent0", "sent1"),
    "B": ("id", "FalseSent", "OptionA", "OptionB", "OptionC"),
    "C": ("id", "FalseSent"),
}


@dataclass(frozen=True)
class StatementPair:
    """Two statements; ``nonsense_index`` marks the one against common sense."""

    id: str
    sent0: str
    sent1: str
    nonsense_index: int | None = None

    def __post_init__(self):
        check_text(self.id, "id")
        check_text(self.sent0, "sent0")
        check_text(self.sent1, "sent1")
        if self.nonsense_index is not None:
            check_index(self.nonsense_index, 2, "nonsense_index")

    @property
    def statements(self) -> tuple[str, str]:
        return (self.sent0, self.sent1)


@dataclass(frozen=True)
class ExplanationItem:
    """A false statement and three candidate reasons why it is false."""

    id: str
    false_statement: str
    options: tuple[str, str, str]
    gold_index: int | None = None

    def __post_init__(self):
        check_text(self.id, "id")
        check_text(self.false_statement, "false_statement")
        object.__setattr__(self, "options", tuple(self.options))
        if len(self.options) != 3:
            raise ValueError(f"exactly three options required, got {len(self.options)}")
        for i, opt in enumerate(self.options):
            check_text(opt, f"options[{i}]")
        if self.gold_index is not None:
            check_index(self.gold_index, 3, "gold_index")


@dataclass(frozen=True)
class GenerationItem:
    """A false statement and zero to three reference reasons."""

    id: str
    false_statement: str
    references: tuple[str, ...] = ()

    def __post_init__(self):
        check_text(self.id, "id")
        check_text(self.false_statement, "false_statement")
        object.__setattr__(self, "references", tuple(self.references))
        if len(self.references) > 3:
            raise ValueError(f"at most three references supported, got {len(self.references)}")
        for i, ref in enumerate(self.references):
            check_text(ref, f"references[{i}]")


Example = Union[StatementPair, ExplanationItem, GenerationItem]


def _check_kind(kind: str) -> str:
    k = str(kind).upper()
    if k not in DATASET_KINDS:
        raise DatasetError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    return k


def _read_table(path: Path, n_columns: int, header: Sequence[str] | None) -> list[tuple[int, list[str]]]:
    """Read csv rows as (line_number, fields), enforcing the column count."""
    rows = []
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        if header is not None:
            try:
                first = next(reader)
            except StopIteration:
                raise DatasetError(f"{path}: file is empty, expected header {','.join(header)}")
            if [c.strip() for c in first] != list(header):
                raise DatasetError(
                    f"{path}: line 1: expected header {','.join(header)}, got {','.join(first)}"
                )
        for fields in reader:
            if not fields:
                continue
            if len(fields) != n_columns:
                raise DatasetError(
                    f"{path}: line {reader.line_num}: expected {n_columns} fields, got {len(fields)}"
                )
            rows.append((reader.line_num, [f.strip() for f in fields]))
    return rows


def _read_answers(path: Path, kind: str) -> dict[str, object]:
    """Parse a headerless answers file into {id: label-or-references}."""
    answers: dict[str, object] = {}
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        for fields in reader:
            if not fields:
                continue
            line = reader.line_num
            if kind in ("A", "B"):
                if len(fields) != 2:
                    raise DatasetError(f"{path}: line {line}: expected id,label")
                ex_id, raw = fields[0].strip(), fields[1].strip()
                upper = 2 if kind == "A" else 3
                try:
                    label = int(raw)
                except ValueError:
                    raise DatasetError(f"{path}: line {line}: label {raw!r} is not an integer")
                if not 0 <= label < upper:
                    raise DatasetError(
                        f"{path}: line {line}: label {label} outside [0, {upper}) for kind {kind}"
                    )
                value: object = label
            else:
                if not 2 <= len(fields) <= 4:
                    raise DatasetError(f"{path}: line {line}: expected id,ref1[,ref2,ref3]")
                ex_id = fields[0].strip()
                refs = tuple(f.strip() for f in fields[1:])
                if any(not r for r in refs):
                    raise DatasetError(f"{path}: line {line}: empty reference text")
                value = refs
            if not ex_id:
                raise DatasetError(f"{path}: line {line}: empty id")
            if ex_id in answers:
                raise DatasetError(f"{path}: line {line}: duplicate id {ex_id!r}")
            answers[ex_id] = value
    return answers


def read_answers(path, kind: str) -> dict[str, object]:
    """Parse an answers file on its own: {id: label} or {id: references}."""
    return _read_answers(Path(path), _check_kind(kind))


def load_dataset(kind: str, data_path, answers_path=None) -> list[Example]:
    """Load a task dataset, attaching labels/references when an answers file is given.

    The answers file must cover exactly the ids in the data file; missing or
    unknown ids are errors, as are duplicate ids in either file.
    """
    kind = _check_kind(kind)
    data_path = Path(data_path)
    columns = _DATA_COLUMNS[kind]
    rows = _read_table(data_path, len(columns), header=columns)
    if not rows:
        raise DatasetError(f"{data_path}: no data rows")

    answers = _read_answers(Path(answers_path), kind) if answers_path is not None else None
    if answers is not None:
        data_ids = [fields[0] for _, fields in rows]
        missing = [i for i in data_ids if i not in answers]
        if missing:
            raise DatasetError(f"{answers_path}: no answer for id(s) {', '.join(missing[:5])}")
        unknown = [i for i in answers if i not in set(data_ids)]
        if unknown:
            raise DatasetError(f"{answers_path}: answer id(s) not in data: {', '.join(unknown[:5])}")

    examples: list[Example] = []
    seen: set[str] = set()
    for line, fields in rows:
        ex_id = fields[0]
        if ex_id in seen:
            raise DatasetError(f"{data_path}: line {line}: duplicate id {ex_id!r}")
        seen.add(ex_id)
        try:
            if kind == "A":
                label = answers[ex_id] if answers is not None else None
                examples.append(StatementPair(ex_id, fields[1], fields[2], nonsense_index=label))
            elif kind == "B":
                label = answers[ex_id] if answers is not None else None
                examples.append(
                    ExplanationItem(ex_id, fields[1], tuple(fields[2:5]), gold_index=label)
                )
            else:
                refs = answers[ex_id] if answers is not None else ()
                examples.append(GenerationItem(ex_id, fields[1], references=refs))
        except ValueError as exc:
            raise DatasetError(f"{data_path}: line {line}: {exc}") from exc
    return examples


def save_dataset(kind: str, examples: Sequence[Example], data_path, answers_path=None) -> None:
    """Write examples back to the file formats load_dataset reads.

    When an answers path is given, every example must carry its label or
    references (otherwise the reload coverage check would fail).
    """
    kind = _check_kind(kind)
    data_path = Path(data_path)
    with open(data_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(_DATA_COLUMNS[kind])
        for ex in examples:
            if kind == "A":
                writer.writerow([ex.id, ex.sent0, ex.sent1])
            elif kind == "B":
                writer.writerow([ex.id, ex.false_statement, *ex.options])
            else:
                writer.writerow([ex.id, ex.false_statement])
    if answers_path is None:
        return
    with open(answers_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for ex in examples:
            if kind == "A":
                if ex.nonsense_index is None:
                    raise DatasetError(f"example {ex.id!r} has no label to save")
                writer.writerow([ex.id, ex.nonsense_index])
            elif kind == "B":
                if ex.gold_index is None:
                    raise DatasetError(f"example {ex.id!r} has no label to save")
                writer.writerow([ex.id, ex.gold_index])
            else:
                if not ex.references:
                    raise DatasetError(f"example {ex.id!r} has no references to save")
                writer.writerow([ex.id, *ex.references])


def _texts_of(kind: str, ex: Example) -> list[str]:
    if kind == "A":
        return [ex.sent0, ex.sent1]
    if kind == "B":
        return [ex.false_statement, *ex.options]
    return [ex.false_statement, *ex.references]


def dataset_stats(kind: str, examples: Sequence[Example]) -> dict:
    """Summary statistics for a loaded dataset (counts, labels, token lengths)."""
    kind = _check_kind(kind)
    if not examples:
        raise DatasetError("cannot summarize an empty dataset")
    lengths: list[int] = []
    vocab: set[str] = set()
    label_counts: dict[str, int] = {}
    labeled = 0
    for ex in examples:
        for text in _texts_of(kind, ex):
            toks = tokenize_reference(text)
            lengths.append(len(toks))
            vocab.update(toks)
        label = getattr(ex, "nonsense_index", None) if kind == "A" else getattr(ex, "gold_index", None)
        if kind == "C":
            label = len(ex.references) or None
        if label is not None:
            labeled += 1
            label_counts[str(label)] = label_counts.get(str(label), 0) + 1
    return {
        "kind": kind,
        "examples": len(examples),
        "labeled": labeled,
        "label_counts": dict(sorted(label_counts.items())),
        "token_count_min": min(lengths),
        "token_count_mean": round(mean(lengths), 3),
        "token_count_max": max(lengths),
        "vocabulary_size": len(vocab),
    }
