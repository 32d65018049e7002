"""Pack ConvQA instances into fixed-length model inputs.

Each instance becomes one or more windows ``[CLS] question [SEP] passage-slice [SEP]``.
History enters either through the HAE id channel (``hae``) or by prepending
history text to the question (``phqa``/``pha``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .history import ConvQAInstance
from .tokenizer import CLS, SEP, CharSpan, TokenizedText, Tokenizer

SENTINEL_DROPPED = -1
NO_SPAN: CharSpan = (-1, -1)


class HistoryMode(str, Enum):
    NONE = "none"
    HAE = "hae"
    PHQA = "phqa"
    PHA = "pha"


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class FeaturizerConfig:
    max_seq_len: int = 384
    doc_stride: int = 128
    max_question_len: int = 64
    history_mode: HistoryMode = HistoryMode.HAE

    def __post_init__(self):
        object.__setattr__(self, "history_mode", HistoryMode(self.history_mode))
        if self.max_question_len < 1 or self.doc_stride < 1:
            raise ValueError("max_question_len and doc_stride must be positive")
        if self.max_question_len + 3 >= self.max_seq_len:
            raise ValueError(
                f"max_question_len + 3 ({self.max_question_len + 3}) must be < "
                f"max_seq_len ({self.max_seq_len})"
            )


@dataclass
class EncodedWindow:
    dialog_id: str
    turn_index: int
    window_index: int
    token_ids: np.ndarray
    segment_ids: np.ndarray
    hae_ids: np.ndarray
    attention_mask: np.ndarray
    start_label: int
    end_label: int
    window_passage_offset: int  # passage-token index of the first passage token here
    question_len: int
    char_spans: list[CharSpan]  # per sequence position; NO_SPAN outside the passage slice

    @property
    def has_labels(self) -> bool:
        return self.start_label != SENTINEL_DROPPED

    @property
    def passage_positions(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.char_spans) if s != NO_SPAN], dtype=np.int64)

    def to_json(self) -> dict:
        return {
            "dialog_id": self.dialog_id,
            "turn_index": self.turn_index,
            "window_index": self.window_index,
            "token_ids": self.token_ids.tolist(),
            "segment_ids": self.segment_ids.tolist(),
            "hae_ids": self.hae_ids.tolist(),
            "attention_mask": self.attention_mask.tolist(),
            "start_label": self.start_label,
            "end_label": self.end_label,
            "window_passage_offset": self.window_passage_offset,
            "char_spans": [list(s) for s in self.char_spans],
        }


def _overlaps(span: CharSpan, start: int, end: int) -> bool:
    return span[0] < end and start < span[1]


def build_question_tokens(
    instance: ConvQAInstance, config: FeaturizerConfig, tokenizer: Tokenizer
) -> list[str]:
    mode = config.history_mode
    pieces: list[str] = []
    if mode is HistoryMode.PHQA:
        for h in instance.selected_history:
            pieces += tokenizer.tokenize(h.question).tokens
            pieces += tokenizer.tokenize(h.answer.text).tokens
    elif mode is HistoryMode.PHA:
        for h in instance.selected_history:
            pieces += tokenizer.tokenize(h.answer.text).tokens
    pieces += tokenizer.tokenize(instance.question).tokens
    return pieces[-config.max_question_len :]


def window_starts(n_passage: int, capacity: int, stride: int) -> list[int]:
    """Passage-token offsets 0, s, 2s, ... until the last token is covered."""
    step = min(stride, capacity)
    starts = [0]
    while starts[-1] + capacity < n_passage:
        starts.append(starts[-1] + step)
    return starts


class Featurizer:
    def __init__(self, tokenizer: Tokenizer, config: FeaturizerConfig):
        self.tokenizer = tokenizer
        self.config = config
        self._passage_cache: dict[str, TokenizedText] = {}

    @property
    def vocab(self):
        return self.tokenizer.vocab

    def _tokenize_passage(self, text: str) -> TokenizedText:
        cached = self._passage_cache.get(text)
        if cached is None:
            cached = self._passage_cache[text] = self.tokenizer.tokenize(text)
        return cached

    def encode(self, instance: ConvQAInstance) -> list[EncodedWindow]:
        cfg = self.config
        vocab = self.vocab
        question = build_question_tokens(instance, cfg, self.tokenizer)
        q_ids = [vocab.id_of(t) for t in question]
        passage = self._tokenize_passage(instance.passage.text)
        n = len(passage.ids)
        if n == 0:
            raise EncodingError(f"passage of dialog {instance.dialog_id!r} is empty after tokenization")
        capacity = cfg.max_seq_len - len(q_ids) - 3

        gold = instance.gold
        gold_tokens = [
            i for i, s in enumerate(passage.char_spans) if _overlaps(s, gold.char_start, gold.char_end)
        ]
        history_spans = []
        if cfg.history_mode is HistoryMode.HAE:
            history_spans = [(h.answer.char_start, h.answer.char_end) for h in instance.selected_history]
        in_history = [
            any(_overlaps(s, a, b) for a, b in history_spans) for s in passage.char_spans
        ]

        windows = []
        offset = len(q_ids) + 2
        for w, start in enumerate(window_starts(n, capacity, cfg.doc_stride)):
            stop = min(start + capacity, n)
            length = stop - start
            seq_len = offset + length + 1
            token_ids = np.full(cfg.max_seq_len, vocab.pad_id, dtype=np.int64)
            token_ids[0] = vocab.cls_id
            token_ids[1 : 1 + len(q_ids)] = q_ids
            token_ids[offset - 1] = vocab.sep_id
            token_ids[offset : offset + length] = passage.ids[start:stop]
            token_ids[seq_len - 1] = vocab.sep_id
            segment_ids = np.zeros(cfg.max_seq_len, dtype=np.int64)
            segment_ids[offset:seq_len] = 1
            hae_ids = np.zeros(cfg.max_seq_len, dtype=np.int64)
            hae_ids[offset : offset + length] = in_history[start:stop]
            mask = np.zeros(cfg.max_seq_len, dtype=np.int64)
            mask[:seq_len] = 1
            spans = [NO_SPAN] * cfg.max_seq_len
            spans[offset : offset + length] = passage.char_spans[start:stop]

            start_label = end_label = SENTINEL_DROPPED
            if gold_tokens and gold_tokens[0] >= start and gold_tokens[-1] < stop:
                start_label = offset + gold_tokens[0] - start
                end_label = offset + gold_tokens[-1] - start
            windows.append(
                EncodedWindow(
                    dialog_id=instance.dialog_id,
                    turn_index=instance.turn_index,
                    window_index=w,
                    token_ids=token_ids,
                    segment_ids=segment_ids,
                    hae_ids=hae_ids,
                    attention_mask=mask,
                    start_label=start_label,
                    end_label=end_label,
                    window_passage_offset=start,
                    question_len=len(q_ids),
                    char_spans=spans,
                )
            )
        return windows

    def encode_all(self, instances: Iterable[ConvQAInstance]) -> list[EncodedWindow]:
        return [w for inst in instances for w in self.encode(inst)]


def encode(
    instance: ConvQAInstance, tokenizer: Tokenizer, config: FeaturizerConfig
) -> list[EncodedWindow]:
    return Featurizer(tokenizer, config).encode(instance)


def labeled(windows: Iterable[EncodedWindow]) -> list[EncodedWindow]:
    """Windows usable for training (gold span fully inside the slice)."""
    return [w for w in windows if w.has_labels]


@dataclass
class Batch:
    token_ids: np.ndarray  # (B, T)
    segment_ids: np.ndarray
    hae_ids: np.ndarray
    attention_mask: np.ndarray
    start_labels: np.ndarray  # (B,)
    end_labels: np.ndarray

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def stack(windows: Sequence[EncodedWindow]) -> Batch:
    return Batch(
        token_ids=np.stack([w.token_ids for w in windows]),
        segment_ids=np.stack([w.segment_ids for w in windows]),
        hae_ids=np.stack([w.hae_ids for w in windows]),
        attention_mask=np.stack([w.attention_mask for w in windows]),
        start_labels=np.array([w.start_label for w in windows], dtype=np.int64),
        end_labels=np.array([w.end_label for w in windows], dtype=np.int64),
    )


def batch(
    windows: Sequence[EncodedWindow],
    batch_size: int = 12,
    shuffle: bool = False,
    seed: int = 0,
) -> list[Batch]:
    order = np.arange(len(windows))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(windows))
    return [
        stack([windows[i] for i in order[s : s + batch_size]])
        for s in range(0, len(windows), batch_size)
    ]


def dump_windows(windows: Iterable[EncodedWindow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in windows:
            fh.write(json.dumps(w.to_json()) + "\n")
