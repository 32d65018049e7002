import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convqa.featurizer import NO_SPAN, EncodedWindow, Featurizer, FeaturizerConfig
from convqa.history import SelectorConfig
from convqa.inference import (
    HistorySource,
    NoValidSpanError,
    PredictConfig,
    best_span,
    n_best_spans,
    predict_dialog,
    read_predictions,
    write_predictions,
)
from convqa.model import init_params
from convqa.tokenizer import Tokenizer

from helpers import synth_windows, tiny_model
from oracles import brute_best_span


def make_window(n_question, n_passage, T, index=0, offset=0):
    """Window whose passage slice starts after [CLS] q [SEP]; word i spans chars (3i, 3i+2)."""
    spans = [NO_SPAN] * T
    first = n_question + 2
    for i in range(n_passage):
        w = offset + i
        spans[first + i] = (3 * w, 3 * w + 2)
    z = np.zeros(T, dtype=np.int64)
    return EncodedWindow("d", 1, index, z, z, z, z, -1, -1, offset, n_question, spans)


TEXT = " ".join(f"{i % 100:02d}" for i in range(200))


def test_peak_inside_length():
    w = make_window(2, 20, 30)
    start = np.zeros(30)
    end = np.zeros(30)
    start[5], end[7] = 5.0, 5.0
    p = best_span([(w, start, end)], TEXT, PredictConfig())
    assert p.token_span == (5, 7)
    assert p.char_span == (3, 11) and p.text == TEXT[3:11]
    assert p.score == 10.0


def test_reversed_pair_discarded():
    w = make_window(2, 20, 30)
    start = np.zeros(30)
    end = np.zeros(30)
    start[9], end[6] = 10.0, 10.0
    start[6], end[8] = 3.0, 2.0
    p = best_span([(w, start, end)], TEXT, PredictConfig())
    s, e = p.token_span
    assert s <= e
    assert p.score == max(start[a] + end[b] for a in range(4, 24) for b in range(a, 24))


def test_length_limit():
    w = make_window(0, 40, 44)
    start = np.zeros(44)
    end = np.zeros(44)
    start[2], end[32] = 10.0, 10.0  # 31 tokens
    end[31] = 9.0  # 30 tokens
    p = best_span([(w, start, end)], TEXT, PredictConfig(max_answer_len=30))
    assert p.token_span == (2, 31)


def test_question_positions_never_chosen():
    w = make_window(5, 10, 20)
    start = np.zeros(20)
    end = np.zeros(20)
    start[1], end[2] = 100.0, 100.0
    p = best_span([(w, start, end)], TEXT, PredictConfig())
    assert p.token_span[0] >= 7


def test_no_valid_span():
    w = make_window(3, 0, 10)
    with pytest.raises(NoValidSpanError):
        best_span([(w, np.zeros(10), np.zeros(10))], TEXT, PredictConfig())


def test_ties_prefer_earlier_window():
    a = make_window(1, 5, 10, index=0, offset=0)
    b = make_window(1, 5, 10, index=1, offset=3)
    logits = np.zeros(10)
    p = best_span([(a, logits, logits), (b, logits, logits)], TEXT, PredictConfig())
    assert p.window_id == 0 and p.token_span == (3, 3)


def test_n_best_head_equals_best():
    rng = np.random.default_rng(0)
    w = [make_window(2, 12, 20, index=i, offset=4 * i) for i in range(3)]
    items = [(x, rng.normal(size=20), rng.normal(size=20)) for x in w]
    top = n_best_spans(items, TEXT, PredictConfig(n_best=5))
    assert len(top) == 5
    assert [t.score for t in top] == sorted((t.score for t in top), reverse=True)
    assert top[0] == best_span(items, TEXT, PredictConfig())


@st.composite
def window_sets(draw):
    n = draw(st.integers(1, 3))
    items = []
    for i in range(n):
        T = draw(st.integers(4, 64))
        nq = draw(st.integers(0, T - 3))
        npass = draw(st.integers(0, T - nq - 3))
        values = st.integers(-3, 3).map(float)  # small ints force many ties
        start = np.array(draw(st.lists(values, min_size=T, max_size=T)))
        end = np.array(draw(st.lists(values, min_size=T, max_size=T)))
        items.append((make_window(nq, npass, T, index=i, offset=draw(st.integers(0, 50))), start, end))
    return items, draw(st.integers(1, 8))


@settings(max_examples=300, deadline=None)
@given(window_sets())
def test_best_span_matches_brute_force(case):
    items, max_len = case
    cfg = PredictConfig(max_answer_len=max_len)
    expected = brute_best_span(items, max_len)
    if expected is None:
        with pytest.raises(NoValidSpanError):
            best_span(items, TEXT, cfg)
        return
    p = best_span(items, TEXT, cfg)
    assert (p.score, p.window_id, *p.token_span) == expected
    s, e = p.token_span
    assert s <= e and e - s + 1 <= max_len
    assert p.text == TEXT[p.char_span[0] : p.char_span[1]]


def test_predict_dialog_orders_turns_and_history_sources(tmp_path):
    dialogs, vocab, _ = synth_windows(n_dialogs=2, turns=3)
    cfg = tiny_model(len(vocab))
    params = init_params(cfg)
    featurizer = Featurizer(Tokenizer(vocab), FeaturizerConfig(max_seq_len=32, doc_stride=8, max_question_len=8))
    for source in HistorySource:
        preds = predict_dialog(dialogs[0], params, cfg, featurizer, SelectorConfig(j=2), PredictConfig(history_source=source))
        assert [p.turn_index for p in preds] == [1, 2, 3]
        for p in preds:
            assert p.text == dialogs[0].passage.text[p.char_span[0] : p.char_span[1]]
    write_predictions(preds, tmp_path / "p.jsonl")
    back = read_predictions(tmp_path / "p.jsonl")
    assert [b["answer_text"] for b in back] == [p.text for p in preds]
    assert set(back[0]) == {"dialog_id", "turn_index", "answer_text", "char_start", "char_end", "score"}
