"""Uncased WordPiece tokenization that keeps character offsets into the source text."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)

CharSpan = tuple[int, int]


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mapping: dict[str, int] = {}
        for i, tok in enumerate(self.tokens):
            if tok in mapping:
                raise VocabError(f"duplicate token {tok!r} at line {i + 1}")
            mapping[tok] = i
        missing = [t for t in SPECIAL_TOKENS if t not in mapping]
        if missing:
            raise VocabError(f"vocabulary is missing special tokens {missing}")
        if mapping[PAD] != 0:
            raise VocabError(f"{PAD} must have id 0, found {mapping[PAD]}")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP]

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)


def load_vocab(path: str | Path) -> Vocab:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return Vocab(tuple(line.rstrip("\r") for line in lines))


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def build_vocab(texts: Iterable[str]) -> Vocab:
    """Whole-word vocabulary over ``texts`` (sorted, specials first)."""
    words = {w for text in texts for w, _ in basic_normalize(text)}
    words.difference_update(SPECIAL_TOKENS)
    return Vocab(SPECIAL_TOKENS + tuple(sorted(words)))


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def _is_separator(ch: str) -> bool:
    if ch.isspace():
        return True
    cat = unicodedata.category(ch)
    return cat in ("Cc", "Cf", "Zs") or ord(ch) in (0, 0xFFFD)


def basic_normalize(text: str) -> list[tuple[str, CharSpan]]:
    """Split on whitespace and punctuation, lowercase, keep spans into ``text``."""
    words: list[tuple[str, CharSpan]] = []
    start = None
    for i, ch in enumerate(text):
        if _is_separator(ch) or _is_punctuation(ch):
            if start is not None:
                words.append((text[start:i].lower(), (start, i)))
                start = None
            if _is_punctuation(ch):
                words.append((ch.lower(), (i, i + 1)))
        elif start is None:
            start = i
    if start is not None:
        words.append((text[start:].lower(), (start, len(text))))
    return words


def wordpiece(word: str, vocab: Vocab, max_chars: int = 100) -> list[str]:
    """Greedy longest-match-first subword split; any dead end maps the word to [UNK]."""
    if len(word) > max_chars:
        return [UNK]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = "##" + candidate
            if candidate in vocab:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


@dataclass(frozen=True)
class TokenizedText:
    tokens: list[str]
    ids: list[int]
    char_spans: list[CharSpan]


class Tokenizer:
    def __init__(self, vocab: Vocab):
        self.vocab = vocab

    def tokenize(self, text: str) -> TokenizedText:
        tokens, ids, spans = [], [], []
        for word, span in basic_normalize(text):
            for piece in wordpiece(word, self.vocab):
                tokens.append(piece)
                ids.append(self.vocab.id_of(piece))
                spans.append(span)
        return TokenizedText(tokens, ids, spans)
