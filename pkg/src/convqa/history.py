"""History selection and instance construction.

A dialog turn ``k`` is first expanded into one *variation* per earlier turn,
each carrying a single history turn. A selection policy keeps some of them
and the survivors are merged back into one :class:`ConvQAInstance`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .corpus import AnswerSpan, Dialog, Passage

QUAC_MAX_HISTORY = 11


@dataclass(frozen=True)
class HistoryTurn:
    turn_index: int
    question: str
    answer: AnswerSpan


@dataclass(frozen=True)
class Variation:
    passage: Passage
    question: str
    history_turn: HistoryTurn
    gold: AnswerSpan
    turn_index: int  # k, the turn being answered


@dataclass(frozen=True)
class SelectorConfig:
    j: int = 0
    max_j: int = QUAC_MAX_HISTORY

    def __post_init__(self):
        if self.j < 0:
            raise ValueError(f"j must be >= 0, got {self.j}")
        if self.j > self.max_j:
            raise ValueError(f"j={self.j} exceeds the bound max_j={self.max_j}")


@dataclass(frozen=True)
class ConvQAInstance:
    dialog_id: str
    turn_index: int
    passage: Passage
    question: str
    selected_history: tuple[HistoryTurn, ...]
    gold: AnswerSpan


# A policy scores each variation; the j highest scores are kept.
SelectionPolicy = Callable[[Variation], float]


def immediate_previous(variation: Variation) -> float:
    return float(variation.history_turn.turn_index)


def build_variations(
    dialog: Dialog, k: int, history_answers: Sequence[AnswerSpan] | None = None
) -> list[Variation]:
    """One variation per history turn of question ``k``.

    ``history_answers`` overrides the gold answers of earlier turns (used when
    the model's own predictions stand in for the conversation history).
    """
    if not 1 <= k <= len(dialog.turns):
        raise IndexError(f"turn {k} out of range 1..{len(dialog.turns)} in {dialog.dialog_id!r}")
    current = dialog.turns[k - 1]
    variations = []
    for turn in dialog.turns[: k - 1]:
        answer = turn.gold_answer
        if history_answers is not None:
            answer = history_answers[turn.turn_index - 1]
        variations.append(
            Variation(
                passage=dialog.passage,
                question=current.question,
                history_turn=HistoryTurn(turn.turn_index, turn.question, answer),
                gold=current.gold_answer,
                turn_index=k,
            )
        )
    return variations


def select_history(
    variations: Sequence[Variation],
    config: SelectorConfig,
    policy: SelectionPolicy = immediate_previous,
) -> list[HistoryTurn]:
    if len({v.turn_index for v in variations}) > 1:
        raise ValueError("variations must all belong to the same question")
    if config.j == 0:
        return []
    ranked = sorted(variations, key=lambda v: (policy(v), v.history_turn.turn_index), reverse=True)
    kept = [v.history_turn for v in ranked[: config.j]]
    return sorted(kept, key=lambda h: h.turn_index)


def merge(
    passage: Passage,
    question: str,
    selected: Sequence[HistoryTurn],
    gold: AnswerSpan,
    dialog_id: str = "",
    turn_index: int = 0,
) -> ConvQAInstance:
    indices = [h.turn_index for h in selected]
    if len(set(indices)) != len(indices):
        raise ValueError(f"duplicate history turn_index in {indices}")
    if turn_index and any(i >= turn_index for i in indices):
        raise ValueError(f"history turns {indices} must precede turn {turn_index}")
    return ConvQAInstance(
        dialog_id=dialog_id,
        turn_index=turn_index,
        passage=passage,
        question=question,
        selected_history=tuple(sorted(selected, key=lambda h: h.turn_index)),
        gold=gold,
    )


def build_instance(
    dialog: Dialog,
    k: int,
    config: SelectorConfig,
    history_answers: Sequence[AnswerSpan] | None = None,
    policy: SelectionPolicy = immediate_previous,
) -> ConvQAInstance:
    variations = build_variations(dialog, k, history_answers)
    selected = select_history(variations, config, policy)
    turn = dialog.turns[k - 1]
    return merge(dialog.passage, turn.question, selected, turn.gold_answer, dialog.dialog_id, k)


def build_instances(dialogs: Sequence[Dialog], config: SelectorConfig) -> list[ConvQAInstance]:
    """Gold-history instances for every turn of every dialog."""
    return [
        build_instance(dialog, k, config)
        for dialog in dialogs
        for k in range(1, len(dialog.turns) + 1)
    ]
