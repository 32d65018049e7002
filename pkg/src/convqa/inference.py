"""From span logits to answers, and dialog-level prediction with gold or predicted history."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import AnswerSpan, Dialog
from .featurizer import EncodedWindow, Featurizer, NO_SPAN, stack
from .history import SelectorConfig, build_instance
from .model import ModelConfig, ModelParams, forward


class HistorySource(str, Enum):
    GOLD = "gold"
    PREDICTED = "predicted"


class NoValidSpanError(ValueError):
    pass


@dataclass(frozen=True)
class PredictConfig:
    max_answer_len: int = 30
    n_best: int = 20
    history_source: HistorySource = HistorySource.GOLD

    def __post_init__(self):
        object.__setattr__(self, "history_source", HistorySource(self.history_source))
        if self.max_answer_len < 1:
            raise ValueError("max_answer_len must be >= 1")


@dataclass(frozen=True)
class SpanPrediction:
    dialog_id: str
    turn_index: int
    text: str
    char_span: tuple[int, int]
    score: float
    window_id: int
    token_span: tuple[int, int] = (-1, -1)

    def to_json(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "turn_index": self.turn_index,
            "answer_text": self.text,
            "char_start": self.char_span[0],
            "char_end": self.char_span[1],
            "score": self.score,
        }


def _valid_pairs(window: EncodedWindow, max_answer_len: int) -> np.ndarray:
    """Boolean (T, T) matrix of admissible (start, end) positions."""
    T = len(window.char_spans)
    ok = np.array([s != NO_SPAN for s in window.char_spans])
    s = np.arange(T)[:, None]
    e = np.arange(T)[None, :]
    return ok[:, None] & ok[None, :] & (s <= e) & (e - s + 1 <= max_answer_len)


def _scored(window: EncodedWindow, start_logits, end_logits, max_answer_len: int) -> np.ndarray:
    valid = _valid_pairs(window, max_answer_len)
    scores = np.asarray(start_logits, dtype=np.float64)[:, None] + np.asarray(
        end_logits, dtype=np.float64
    )[None, :]
    return np.where(valid, scores, -np.inf)


def _prediction(window: EncodedWindow, s: int, e: int, score: float, passage_text: str) -> SpanPrediction:
    a, b = window.char_spans[s][0], window.char_spans[e][1]
    return SpanPrediction(
        dialog_id=window.dialog_id,
        turn_index=window.turn_index,
        text=passage_text[a:b],
        char_span=(a, b),
        score=score,
        window_id=window.window_index,
        token_span=(s, e),
    )


def best_span(
    windows_with_logits: Iterable[tuple[EncodedWindow, np.ndarray, np.ndarray]],
    passage_text: str,
    config: PredictConfig,
) -> SpanPrediction:
    """Highest ``start_logit + end_logit`` over valid spans of all windows.

    A span is valid when start <= end, it is at most ``max_answer_len`` tokens
    long and both ends sit on passage tokens. Ties go to the earlier window,
    then the smaller start, then the smaller end.
    """
    best = None
    for window, start_logits, end_logits in windows_with_logits:
        scores = _scored(window, start_logits, end_logits, config.max_answer_len)
        idx = int(np.argmax(scores))  # first maximum in row-major (start, end) order
        score = float(scores.flat[idx])
        if np.isfinite(score) and (best is None or score > best[0]):
            s, e = divmod(idx, scores.shape[1])
            best = (score, window, s, e)
    if best is None:
        raise NoValidSpanError("no valid answer span in any window")
    score, window, s, e = best
    return _prediction(window, s, e, score, passage_text)


def n_best_spans(
    windows_with_logits: Iterable[tuple[EncodedWindow, np.ndarray, np.ndarray]],
    passage_text: str,
    config: PredictConfig,
) -> list[SpanPrediction]:
    """Top ``n_best`` valid spans, ordered like :func:`best_span` ranks them."""
    candidates = []
    for w, (window, start_logits, end_logits) in enumerate(windows_with_logits):
        flat = _scored(window, start_logits, end_logits, config.max_answer_len).ravel()
        order = np.argsort(-flat, kind="stable")[: config.n_best]
        for idx in order:
            if np.isfinite(flat[idx]):
                s, e = divmod(int(idx), len(window.char_spans))
                candidates.append((-float(flat[idx]), w, s, e, window))
    if not candidates:
        raise NoValidSpanError("no valid answer span in any window")
    candidates.sort(key=lambda c: c[:4])
    return [
        _prediction(window, s, e, -neg, passage_text)
        for neg, _, s, e, window in candidates[: config.n_best]
    ]


def window_logits(
    windows: Sequence[EncodedWindow], params: ModelParams, model_config: ModelConfig
) -> list[tuple[EncodedWindow, np.ndarray, np.ndarray]]:
    start, end = forward(stack(windows), params, model_config)
    return [(w, start[i], end[i]) for i, w in enumerate(windows)]


def predict_dialog(
    dialog: Dialog,
    params: ModelParams,
    model_config: ModelConfig,
    featurizer: Featurizer,
    selector: SelectorConfig,
    config: PredictConfig,
) -> list[SpanPrediction]:
    """Answer every turn in order, feeding gold or earlier predicted answers as history."""
    predictions: list[SpanPrediction] = []
    predicted_answers: list[AnswerSpan] = []
    for k in range(1, len(dialog.turns) + 1):
        history = None
        if config.history_source is HistorySource.PREDICTED:
            history = predicted_answers
        instance = build_instance(dialog, k, selector, history_answers=history)
        windows = featurizer.encode(instance)
        try:
            pred = best_span(window_logits(windows, params, model_config), dialog.passage.text, config)
        except NoValidSpanError as exc:
            raise NoValidSpanError(f"dialog {dialog.dialog_id!r} turn {k}: {exc}") from exc
        predictions.append(pred)
        predicted_answers.append(AnswerSpan(pred.char_span[0], pred.char_span[1], pred.text))
    return predictions


def predict_dataset(
    dialogs: Sequence[Dialog],
    params: ModelParams,
    model_config: ModelConfig,
    featurizer: Featurizer,
    selector: SelectorConfig,
    config: PredictConfig,
) -> list[SpanPrediction]:
    return [
        p
        for dialog in dialogs
        for p in predict_dialog(dialog, params, model_config, featurizer, selector, config)
    ]


def write_predictions(predictions: Iterable[SpanPrediction], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps(p.to_json(), ensure_ascii=False) + "\n")


def read_predictions(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
