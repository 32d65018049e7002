import json

import pytest

from convqa.corpus import AnswerSpan, Dialog, Passage, Turn


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def pinochet_record():
    return {
        "id": "d1",
        "title": "Augusto Pinochet",
        "passage": "Pinochet was publicly known as a man",
        "turns": [
            {
                "turn_index": 1,
                "question": "Was he known for being intelligent",
                "answer": {"char_start": 22, "char_end": 27, "text": "known"},
            }
        ],
    }


def make_dialog(text, spans, dialog_id="d", questions=None, human_f1=1.0):
    """Dialog whose turn k answers ``spans[k-1]`` (char offsets into ``text``)."""
    turns = []
    for k, (a, b) in enumerate(spans, start=1):
        q = questions[k - 1] if questions else f"question {k} ?"
        turns.append(Turn(k, q, AnswerSpan(a, b, text[a:b]), human_f1=human_f1))
    return Dialog(dialog_id, Passage(dialog_id, "t", text), tuple(turns))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
