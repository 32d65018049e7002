"""QuAC-style dialog corpus: data model, loading, validation and serialization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

logger = logging.getLogger(__name__)

CANNOTANSWER = "CANNOTANSWER"
MAX_QUAC_TURNS = 12


class DatasetError(ValueError):
    """Raised for malformed dataset files."""


class SpanMismatchError(DatasetError):
    def __init__(self, dialog_id: str, turn_index: int, expected: str, found: str):
        super().__init__(
            f"dialog {dialog_id!r} turn {turn_index}: answer text {expected!r} "
            f"does not match passage slice {found!r}"
        )
        self.dialog_id = dialog_id
        self.turn_index = turn_index


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str
    cannot_answer_appended: bool = False


@dataclass(frozen=True)
class AnswerSpan:
    char_start: int
    char_end: int  # exclusive
    text: str


@dataclass(frozen=True)
class Turn:
    turn_index: int
    question: str
    gold_answer: AnswerSpan
    references: tuple[AnswerSpan, ...] = ()
    human_f1: float | None = None

    def __post_init__(self):
        if not self.references:
            object.__setattr__(self, "references", (self.gold_answer,))


@dataclass(frozen=True)
class Dialog:
    dialog_id: str
    passage: Passage
    turns: tuple[Turn, ...]


@dataclass
class ValidationReport:
    dialogs: int = 0
    turns: int = 0
    errors: int = 0
    warnings: int = 0
    messages: list[str] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        return {
            "dialogs": self.dialogs,
            "turns": self.turns,
            "errors": self.errors,
            "warnings": self.warnings,
        }


def span_problem(passage: Passage, span: AnswerSpan) -> str | None:
    """Return a description of what is wrong with ``span``, or None if it is valid."""
    n = len(passage.text)
    if not (0 <= span.char_start < span.char_end <= n):
        return f"offsets ({span.char_start}, {span.char_end}) outside passage of length {n}"
    found = passage.text[span.char_start : span.char_end]
    if found != span.text:
        return f"answer text {span.text!r} does not match passage slice {found!r}"
    return None


def validate_dataset(dialogs: Iterable[Dialog]) -> ValidationReport:
    report = ValidationReport()
    for dialog in dialogs:
        report.dialogs += 1
        report.turns += len(dialog.turns)
        where = f"dialog {dialog.dialog_id!r}"
        if not dialog.passage.text:
            report.errors += 1
            report.messages.append(f"{where}: empty passage")
        if dialog.passage.cannot_answer_appended and not dialog.passage.text.endswith(
            " " + CANNOTANSWER
        ):
            report.errors += 1
            report.messages.append(f"{where}: passage lacks the {CANNOTANSWER} suffix")
        if len(dialog.turns) > MAX_QUAC_TURNS:
            report.warnings += 1
            report.messages.append(f"{where}: {len(dialog.turns)} turns (> {MAX_QUAC_TURNS})")
        for expected, turn in enumerate(dialog.turns, start=1):
            if turn.turn_index != expected:
                report.errors += 1
                report.messages.append(
                    f"{where}: turn_index {turn.turn_index} where {expected} expected"
                )
            if not turn.question:
                report.errors += 1
                report.messages.append(f"{where} turn {turn.turn_index}: empty question")
            if turn.references[0] != turn.gold_answer:
                report.errors += 1
                report.messages.append(
                    f"{where} turn {turn.turn_index}: gold answer is not references[0]"
                )
            for span in turn.references:
                problem = span_problem(dialog.passage, span)
                if problem:
                    report.errors += 1
                    report.messages.append(f"{where} turn {turn.turn_index}: {problem}")
    return report


# ---------------------------------------------------------------------------
# loading


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise DatasetError(f"{where}: missing field {key!r}")
    return obj[key]


def _parse_span(raw: Any, where: str) -> tuple[int | None, int | None, str]:
    text = _require(raw, "text", where)
    start = raw.get("char_start")
    end = raw.get("char_end")
    if start is not None and start < 0:
        start = None
    if start is not None and end is None:
        end = start + len(text)
    return start, end, text


def _resolve_span(
    passage: Passage, start: int | None, end: int | None, text: str, dialog_id: str, turn_index: int
) -> AnswerSpan:
    if start is None:
        if text == CANNOTANSWER and passage.cannot_answer_appended:
            start = len(passage.text) - len(CANNOTANSWER)
            end = len(passage.text)
        else:
            raise DatasetError(
                f"dialog {dialog_id!r} turn {turn_index}: answer {text!r} has no character offsets"
            )
    span = AnswerSpan(int(start), int(end), text)
    if not (0 <= span.char_start < span.char_end <= len(passage.text)):
        raise SpanMismatchError(dialog_id, turn_index, text, "<out of range>")
    found = passage.text[span.char_start : span.char_end]
    if found != text:
        raise SpanMismatchError(dialog_id, turn_index, text, found)
    return span


def _make_passage(pid: str, title: str, text: str, append_cannot_answer: bool) -> Passage:
    suffix = " " + CANNOTANSWER
    if text.endswith(suffix):
        return Passage(pid, title, text, True)
    if append_cannot_answer:
        return Passage(pid, title, text + suffix, True)
    return Passage(pid, title, text, False)


def _dialog_from_record(record: dict, i: int, append_cannot_answer: bool) -> Dialog:
    where = f"data[{i}]"
    dialog_id = str(_require(record, "id", where))
    text = _require(record, "passage", where)
    if not isinstance(text, str) or not text:
        raise DatasetError(f"{where}: passage must be a non-empty string")
    passage = _make_passage(dialog_id, record.get("title", ""), text, append_cannot_answer)
    turns = []
    for t, raw_turn in enumerate(_require(record, "turns", where)):
        twhere = f"{where}.turns[{t}]"
        turn_index = int(_require(raw_turn, "turn_index", twhere))
        question = _require(raw_turn, "question", twhere)
        if not question:
            raise DatasetError(f"{twhere}: empty question")
        gold = _resolve_span(
            passage, *_parse_span(_require(raw_turn, "answer", twhere), f"{twhere}.answer"),
            dialog_id, turn_index,
        )
        refs = [
            _resolve_span(passage, *_parse_span(r, f"{twhere}.references[{n}]"), dialog_id, turn_index)
            for n, r in enumerate(raw_turn.get("references") or [])
        ]
        if not refs or refs[0] != gold:
            refs.insert(0, gold)
        human_f1 = raw_turn.get("human_f1")
        turns.append(
            Turn(
                turn_index=turn_index,
                question=question,
                gold_answer=gold,
                references=tuple(refs),
                human_f1=None if human_f1 is None else float(human_f1),
            )
        )
    for expected, turn in enumerate(turns, start=1):
        if turn.turn_index != expected:
            raise DatasetError(
                f"{where}: turn_index values must be 1..n consecutive "
                f"(found {turn.turn_index} at position {expected})"
            )
    if len(turns) > MAX_QUAC_TURNS:
        logger.warning("dialog %s has %d turns (> %d)", dialog_id, len(turns), MAX_QUAC_TURNS)
    return Dialog(dialog_id, passage, tuple(turns))


def _convert_native_quac(raw: dict) -> dict:
    """Map QuAC v0.2 field names (paragraphs/context/qas) onto the internal schema."""
    records = []
    for article in raw["data"]:
        for paragraph in article["paragraphs"]:
            turns = []
            for n, qa in enumerate(paragraph["qas"], start=1):
                orig = qa.get("orig_answer") or qa["answers"][0]
                turns.append(
                    {
                        "turn_index": n,
                        "question": qa["question"],
                        "answer": _native_span(orig),
                        "references": [_native_span(a) for a in qa.get("answers", [])],
                    }
                )
            records.append(
                {
                    "id": paragraph["id"],
                    "title": article.get("title", ""),
                    "passage": paragraph["context"],
                    "turns": turns,
                }
            )
    return {"data": records}


def _native_span(answer: dict) -> dict:
    start = answer["answer_start"]
    return {"char_start": start, "char_end": start + len(answer["text"]), "text": answer["text"]}


def parse_dataset(raw: Any, append_cannot_answer: bool = False, native_quac: bool = False) -> list[Dialog]:
    if native_quac:
        try:
            raw = _convert_native_quac(raw)
        except (KeyError, IndexError, TypeError) as exc:
            raise DatasetError(f"not a QuAC v0.2 file: missing {exc}") from exc
    data = _require(raw, "data", "<root>")
    if not isinstance(data, list):
        raise DatasetError("<root>.data: expected a list")
    return [_dialog_from_record(rec, i, append_cannot_answer) for i, rec in enumerate(data)]


def load_dataset(
    path: str | Path, append_cannot_answer: bool = False, native_quac: bool = False
) -> list[Dialog]:
    """Load dialogs from the JSON container format.

    Raises DatasetError (with line or field context) for malformed input and
    SpanMismatchError when an answer's text disagrees with its passage slice.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    return parse_dataset(raw, append_cannot_answer=append_cannot_answer, native_quac=native_quac)


# ---------------------------------------------------------------------------
# serialization


def _span_to_json(span: AnswerSpan) -> dict:
    return {"char_start": span.char_start, "char_end": span.char_end, "text": span.text}


def dialog_to_json(dialog: Dialog) -> dict:
    turns = []
    for turn in dialog.turns:
        item = {
            "turn_index": turn.turn_index,
            "question": turn.question,
            "answer": _span_to_json(turn.gold_answer),
            "references": [_span_to_json(r) for r in turn.references],
        }
        if turn.human_f1 is not None:
            item["human_f1"] = turn.human_f1
        turns.append(item)
    return {
        "id": dialog.dialog_id,
        "title": dialog.passage.title,
        "passage": dialog.passage.text,
        "turns": turns,
    }


def dataset_to_json(dialogs: Iterable[Dialog]) -> dict:
    return {"data": [dialog_to_json(d) for d in dialogs]}


def save_dataset(dialogs: Iterable[Dialog], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(dataset_to_json(dialogs), ensure_ascii=False, indent=1), encoding="utf-8"
    )
