"""QuAC-style scoring: word-level F1 and human equivalence (HEQ-Q / HEQ-D)."""

from __future__ import annotations

import re
import string
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Dialog, load_dataset

_PUNCT = set(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class EvalExample:
    dialog_id: str
    turn_index: int
    prediction: str
    references: tuple[str, ...]
    human_f1: float | None = None

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"{self.dialog_id} turn {self.turn_index}: no references")


@dataclass(frozen=True)
class EvalReport:
    f1: float
    heq_q: float
    heq_d: float
    n_questions: int
    n_dialogs: int

    def as_dict(self) -> dict:
        return asdict(self)


def normalize_answer(text: str) -> list[str]:
    """Lowercase, strip punctuation, drop articles, split on whitespace."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    return _ARTICLES.sub(" ", text).split()


def token_f1(pred: str, ref: str) -> float:
    pred_words = normalize_answer(pred)
    ref_words = normalize_answer(ref)
    if not pred_words and not ref_words:
        return 1.0
    if not pred_words or not ref_words:
        return 0.0
    overlap = sum((Counter(pred_words) & Counter(ref_words)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_words)
    recall = overlap / len(ref_words)
    return 2 * precision * recall / (precision + recall)


def question_f1(example: EvalExample, max_over_references: bool = True) -> float:
    refs = example.references if max_over_references else example.references[:1]
    return max(token_f1(example.prediction, r) for r in refs)


def heq(
    examples: Sequence[EvalExample], max_over_references: bool = True
) -> tuple[float, float]:
    """HEQ-Q and HEQ-D in percent: system F1 >= human F1 per question / for a whole dialog."""
    missing = [(e.dialog_id, e.turn_index) for e in examples if e.human_f1 is None]
    if missing:
        shown = ", ".join(f"{d}#{t}" for d, t in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise EvaluationError(f"human_f1 missing for turns: {shown}{more}")
    if not examples:
        return 0.0, 0.0
    per_dialog: dict[str, bool] = defaultdict(lambda: True)
    passed = 0
    for e in examples:
        ok = question_f1(e, max_over_references) >= e.human_f1
        passed += ok
        per_dialog[e.dialog_id] = per_dialog[e.dialog_id] and ok
    heq_q = 100.0 * passed / len(examples)
    heq_d = 100.0 * sum(per_dialog.values()) / len(per_dialog)
    return heq_q, heq_d


def evaluate(
    examples: Sequence[EvalExample],
    max_over_references: bool = True,
    min_human_f1: float | None = None,
) -> EvalReport:
    """Aggregate report. ``min_human_f1`` drops low-agreement questions before scoring."""
    if min_human_f1 is not None:
        examples = [e for e in examples if e.human_f1 is None or e.human_f1 >= min_human_f1]
    if not examples:
        return EvalReport(0.0, 0.0, 0.0, 0, 0)
    f1 = 100.0 * sum(question_f1(e, max_over_references) for e in examples) / len(examples)
    heq_q, heq_d = heq(examples, max_over_references)
    return EvalReport(
        f1=f1,
        heq_q=heq_q,
        heq_d=heq_d,
        n_questions=len(examples),
        n_dialogs=len({e.dialog_id for e in examples}),
    )


def build_examples(dialogs: Iterable[Dialog], predictions: Iterable[dict]) -> list[EvalExample]:
    """Pair each dataset turn with exactly one prediction record."""
    by_key: dict[tuple[str, int], str] = {}
    for p in predictions:
        key = (str(p["dialog_id"]), int(p["turn_index"]))
        if key in by_key:
            raise EvaluationError(f"duplicate prediction for dialog {key[0]!r} turn {key[1]}")
        by_key[key] = p["answer_text"]
    examples = []
    for dialog in dialogs:
        for turn in dialog.turns:
            key = (dialog.dialog_id, turn.turn_index)
            if key not in by_key:
                raise EvaluationError(f"missing prediction for dialog {key[0]!r} turn {key[1]}")
            examples.append(
                EvalExample(
                    dialog_id=dialog.dialog_id,
                    turn_index=turn.turn_index,
                    prediction=by_key.pop(key),
                    references=tuple(r.text for r in turn.references),
                    human_f1=turn.human_f1,
                )
            )
    if by_key:
        d, t = next(iter(by_key))
        raise EvaluationError(f"prediction for unknown dialog {d!r} turn {t}")
    return examples


def evaluate_files(
    predictions_path: str | Path,
    dataset_path: str | Path,
    max_over_references: bool = True,
    min_human_f1: float | None = None,
    native_quac: bool = False,
) -> EvalReport:
    from .inference import read_predictions

    dialogs = load_dataset(dataset_path, append_cannot_answer=True, native_quac=native_quac)
    examples = build_examples(dialogs, read_predictions(predictions_path))
    return evaluate(examples, max_over_references, min_human_f1)
