"""Synthetic coreference dialogs.

Passages are random filler words with one marker word planted per turn. A
self-contained question names a marker ("what comes after m7 ?") and its
answer is the fixed-length segment right after that marker. An anaphoric
question ("what comes after that ?") is answered by the segment right after
the previous turn's answer, so it cannot be resolved without history.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import AnswerSpan, Dialog, Passage, Turn
from .tokenizer import SPECIAL_TOKENS, Vocab

ANAPHOR = "that"
QUESTION_TEMPLATE = "what comes after {} ?"
N_MARKERS = 24


@dataclass(frozen=True)
class SynthConfig:
    n_dialogs: int = 200
    turns_per_dialog: int = 4
    passage_len_tokens: int = 40
    vocab_size: int = 40  # filler words
    seed: int = 0
    coreference_rate: float = 1.0
    answer_len: int = 3

    def __post_init__(self):
        for name in ("n_dialogs", "turns_per_dialog", "passage_len_tokens", "vocab_size", "answer_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.coreference_rate <= 1.0:
            raise ValueError("coreference_rate must be a probability")
        if self.turns_per_dialog > N_MARKERS:
            raise ValueError(f"at most {N_MARKERS} turns per dialog")


def filler_words(config: SynthConfig) -> list[str]:
    return [f"w{i}" for i in range(config.vocab_size)]


def marker_words() -> list[str]:
    return [f"m{i}" for i in range(N_MARKERS)]


def synth_vocab(config: SynthConfig) -> Vocab:
    words = set(QUESTION_TEMPLATE.format(ANAPHOR).split()) | set(marker_words()) | set(filler_words(config))
    return Vocab(SPECIAL_TOKENS + tuple(sorted(words)))


def _dialog(rng: np.random.Generator, config: SynthConfig, dialog_id: str) -> Dialog:
    n_turns = config.turns_per_dialog
    L = config.answer_len
    anaphoric = [False] + [bool(rng.random() < config.coreference_rate) for _ in range(n_turns - 1)]
    markers = [str(m) for m in rng.choice(marker_words(), size=n_turns, replace=False)]

    # block per turn: its marker, followed by the answers of the chain it starts
    blocks: list[tuple[int, int]] = []  # (turn, length)
    for t in range(n_turns):
        if anaphoric[t]:
            blocks.append((t, 1))  # distractor marker only
            continue
        chain = 1
        while t + chain < n_turns and anaphoric[t + chain]:
            chain += 1
        blocks.append((t, 1 + chain * L))
    used = sum(length for _, length in blocks)
    free = config.passage_len_tokens - used
    if free < 0:
        raise ValueError(
            f"passage_len_tokens={config.passage_len_tokens} is too short for "
            f"{n_turns} turns (needs at least {used})"
        )
    placement = rng.permutation(len(blocks))
    cuts = np.sort(rng.integers(0, free + 1, size=len(blocks)))
    gaps = np.diff(np.concatenate([[0], cuts, [free]]))

    fillers = filler_words(config)
    tokens: list[str] = []
    answer_token_start: dict[int, int] = {}
    for gap, b in zip(gaps, placement):
        tokens += [str(w) for w in rng.choice(fillers, size=int(gap))]
        t, length = blocks[b]
        tokens.append(markers[t])
        pos = len(tokens)
        tokens += [str(w) for w in rng.choice(fillers, size=length - 1)]
        if length > 1:
            k = t
            while True:
                answer_token_start[k] = pos
                pos += L
                k += 1
                if k >= n_turns or not anaphoric[k]:
                    break
    tokens += [str(w) for w in rng.choice(fillers, size=int(gaps[-1]))]

    starts = []
    offset = 0
    for tok in tokens:
        starts.append(offset)
        offset += len(tok) + 1
    text = " ".join(tokens)
    turns = []
    for t in range(n_turns):
        a = answer_token_start[t]
        c0 = starts[a]
        c1 = starts[a + L - 1] + len(tokens[a + L - 1])
        span = AnswerSpan(c0, c1, text[c0:c1])
        question = QUESTION_TEMPLATE.format(ANAPHOR if anaphoric[t] else markers[t])
        turns.append(Turn(t + 1, question, span, (span,), human_f1=1.0))
    return Dialog(dialog_id, Passage(dialog_id, "synthetic", text), tuple(turns))


def generate(config: SynthConfig, prefix: str = "synth") -> list[Dialog]:
    rng = np.random.default_rng(config.seed)
    return [_dialog(rng, config, f"{prefix}-{config.seed}-{i}") for i in range(config.n_dialogs)]
