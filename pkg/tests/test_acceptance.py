"""Acceptance criteria, one test per criterion.

Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured values;
the lines are repeated in the terminal summary. Tolerances are fixed constants
below and are never adjusted to make a run pass.

Run just these with ``pytest -m acceptance -s``.
"""

from __future__ import annotations

import json
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from convqa.cli import main as cli_main
from convqa.corpus import save_dataset
from convqa.featurizer import FeaturizerConfig, stack
from convqa.metrics import EvalExample, heq, normalize_answer, question_f1, token_f1
from convqa.model import ModelConfig, forward_backward
from convqa.pipeline import RunSpec, train_and_evaluate, training_windows
from convqa.synthdata import SynthConfig, generate, synth_vocab
from convqa.tokenizer import save_vocab
from convqa.trainer import TrainConfig, load_checkpoint

from gradcheck import max_relative_errors, random_problem
from oracles import brute_f1

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []

# criterion 1
GRAD_REL_TOL = 1e-4
GRAD_RUNTIME_S = 60.0
# criterion 2
OVERFIT_WINDOWS = 16
OVERFIT_MAX_STEPS = 1000
OVERFIT_LOSS = 0.05
# criterion 3
METRIC_CASES = 200
METRIC_TOL = 1e-9
# criterion 4
HAE_GAP = 10.0
HAE_SEEDS = (0, 1, 2, 3, 4)
HAE_RUNTIME_S = 600.0
# criterion 5
DEPTH_J = (1, 2, 4, 8, 11)
DEPTH_SEEDS = (0, 1, 2)
PHQA_DROP = 5.0
HAE_SLACK = 2.0
# criterion 7
DETERMINISM_STEPS = 100


def record(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number} ({title}): {detail}"
    print(line)
    RESULTS.append(line)


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_oracle():
    config = ModelConfig(vocab_size=64, hidden=16, layers=2, heads=2, max_positions=24,
                         dropout_rate=0.0, dtype="float64", seed=3)
    params, batch = random_problem(config, batch_size=2, seq_len=24, seed=0)
    t0 = time.perf_counter()
    errors = max_relative_errors(config, params, batch)
    elapsed = time.perf_counter() - t0
    worst_name = max(errors, key=errors.get)
    passed = errors[worst_name] <= GRAD_REL_TOL and elapsed < GRAD_RUNTIME_S
    record(1, "gradient oracle", passed,
           f"{len(errors)} tensors, max rel err {errors[worst_name]:.2e} ({worst_name}) "
           f"<= {GRAD_REL_TOL:g}; {elapsed:.1f}s < {GRAD_RUNTIME_S:g}s")
    assert passed


def test_criterion_2_overfit(tmp_path):
    synth = SynthConfig(n_dialogs=OVERFIT_WINDOWS, turns_per_dialog=1, passage_len_tokens=20, seed=11)
    data, vocab_path = tmp_path / "overfit.json", tmp_path / "vocab.txt"
    dialogs = generate(synth)
    save_dataset(dialogs, data)
    save_vocab(synth_vocab(synth), vocab_path)
    run = tmp_path / "run"
    flags = ["--max-seq-len", "32", "--stride", "16", "--max-question-len", "8", "--hidden", "32",
             "--layers", "2", "--heads", "4", "--dropout", "0", "--lr", "1e-3", "--j", "0",
             "--history-mode", "none", "--seed", "0"]
    assert cli_main(["train", "--data", str(data), "--vocab", str(vocab_path), "--out", str(run),
                     "--total-steps", str(OVERFIT_MAX_STEPS), *flags]) == 0
    ckpt = load_checkpoint(run / f"ckpt-{OVERFIT_MAX_STEPS}.bin")

    from convqa.pipeline import spec_from_checkpoint

    spec, vocab = spec_from_checkpoint(ckpt)
    windows = training_windows(dialogs, vocab, spec)
    loss, _ = forward_backward(stack(windows), ckpt.params, ckpt.model_config)

    preds = tmp_path / "preds.jsonl"
    assert cli_main(["predict", "--checkpoint", str(run / f"ckpt-{OVERFIT_MAX_STEPS}.bin"),
                     "--data", str(data), "--out", str(preds)]) == 0
    report_path = tmp_path / "report.json"
    assert cli_main(["evaluate", "--predictions", str(preds), "--data", str(data),
                     "--out", str(report_path)]) == 0
    f1 = json.loads(report_path.read_text())["f1"]
    exact = sum(
        json.loads(line)["answer_text"] == d.turns[0].gold_answer.text
        for line, d in zip(preds.read_text().splitlines(), dialogs)
    )
    passed = len(windows) == OVERFIT_WINDOWS and loss < OVERFIT_LOSS and exact == OVERFIT_WINDOWS and f1 == 100.0
    record(2, "overfit", passed,
           f"{len(windows)} windows, {OVERFIT_MAX_STEPS} steps, train loss {loss:.4f} < {OVERFIT_LOSS}, "
           f"exact {exact}/{OVERFIT_WINDOWS}, F1 {f1:.1f}")
    assert passed


def test_criterion_3_metric_oracle():
    rng = np.random.default_rng(0)
    pool = ["a", "an", "the", "The", "man's", "known", "as", "man", "publicly", "culture!",
            "Known,", "x", "(y)", "CANNOTANSWER", "--", "cat", "dog"]

    def sample():
        return " ".join(rng.choice(pool, size=int(rng.integers(0, 7))))

    worst = 0.0
    for _ in range(METRIC_CASES):
        pred = sample()
        refs = tuple(sample() for _ in range(int(rng.integers(1, 4))))
        ex = EvalExample("d", 1, pred, refs, 1.0)
        worst = max(worst,
                    abs(token_f1(pred, refs[0]) - brute_f1(pred, refs[0])),
                    abs(question_f1(ex) - max(brute_f1(pred, r) for r in refs)))
    hand = [
        normalize_answer("The man's culture!") == ["mans", "culture"],
        token_f1("publicly known man", "known as a man") == pytest.approx(2 / 3, abs=1e-12),
        heq([EvalExample("d", 1, "w0 w1 w2 w3 w4 w5 w6 w7 w8 z", ("w0 w1 w2 w3 w4 w5 w6 w7 w8 w9",), 0.8),
             EvalExample("d", 2, "w0 w1 w2 w3 w4 w5 w6 w7 w8 z", ("w0 w1 w2 w3 w4 w5 w6 w7 w8 w9",), 1.0)])[0] == 50.0,
    ]
    passed = worst <= METRIC_TOL and all(hand)
    record(3, "metric oracle", passed,
           f"{METRIC_CASES} random cases, max |diff| {worst:.1e} <= {METRIC_TOL:g}; "
           f"hand examples {sum(hand)}/{len(hand)}")
    assert passed


def _hae_gap_spec(mode: str, seed: int) -> RunSpec:
    return RunSpec(
        featurizer=FeaturizerConfig(max_seq_len=64, doc_stride=32, max_question_len=16),
        model=dict(hidden=32, layers=2, heads=4, dropout_rate=0.0),
        train=TrainConfig(total_steps=1500, lr=1e-3, batch_size=12),
    ).with_cell(mode, 1, seed)


def test_criterion_4_hae_effectiveness():
    base = dict(n_dialogs=200, turns_per_dialog=4, passage_len_tokens=40, coreference_rate=1.0)
    train_set = generate(SynthConfig(seed=100, **base))
    dev_set = generate(SynthConfig(seed=999, **{**base, "n_dialogs": 50}), prefix="dev")
    vocab = synth_vocab(SynthConfig(**base))
    t0 = time.perf_counter()
    gaps, scores = [], []
    for seed in HAE_SEEDS:
        hae, _ = train_and_evaluate(train_set, dev_set, vocab, _hae_gap_spec("hae", seed))
        none, _ = train_and_evaluate(train_set, dev_set, vocab, _hae_gap_spec("none", seed))
        gaps.append(hae.f1 - none.f1)
        scores.append((hae.f1, none.f1))
    elapsed = time.perf_counter() - t0
    median_gap = statistics.median(gaps)
    passed = median_gap >= HAE_GAP and elapsed < HAE_RUNTIME_S
    detail = ", ".join(f"{h:.1f}/{n:.1f}" for h, n in scores)
    record(4, "HAE effectiveness", passed,
           f"median F1(hae)-F1(none) {median_gap:.1f} >= {HAE_GAP:g} over seeds {list(HAE_SEEDS)} "
           f"[hae/none: {detail}]; {elapsed:.0f}s < {HAE_RUNTIME_S:g}s")
    assert passed


DEPTH_PASSAGE = 48


def _depth_spec(mode: str, j: int, seed: int) -> RunSpec:
    return RunSpec(
        featurizer=FeaturizerConfig(max_seq_len=72, doc_stride=4, max_question_len=64),
        model=dict(hidden=32, layers=2, heads=4, dropout_rate=0.0),
        train=TrainConfig(total_steps=1500, lr=1e-3, batch_size=12),
    ).with_cell(mode, j, seed)


def test_criterion_5_history_depth():
    base = dict(n_dialogs=200, turns_per_dialog=8, passage_len_tokens=DEPTH_PASSAGE, coreference_rate=1.0)
    train_set = generate(SynthConfig(seed=100, **base))
    dev_set = generate(SynthConfig(seed=999, **{**base, "n_dialogs": 50}), prefix="dev")
    vocab = synth_vocab(SynthConfig(**base))
    medians: dict[str, dict[int, float]] = {"phqa": {}, "hae": {}}
    for mode in medians:
        for j in DEPTH_J:
            f1s = [train_and_evaluate(train_set, dev_set, vocab, _depth_spec(mode, j, s))[0].f1 for s in DEPTH_SEEDS]
            medians[mode][j] = statistics.median(f1s)
    phqa, hae = medians["phqa"], medians["hae"]
    phqa_best, hae_best = max(phqa.values()), max(hae.values())
    phqa_ok = phqa[11] < phqa_best - PHQA_DROP
    hae_ok = hae[11] >= hae_best - HAE_SLACK
    curve = "; ".join(f"{m} " + " ".join(f"j{j}={v:.1f}" for j, v in medians[m].items()) for m in medians)
    record(5, "history depth", phqa_ok and hae_ok,
           f"phqa j11 {phqa[11]:.1f} < best {phqa_best:.1f} - {PHQA_DROP:g}: {phqa_ok}; "
           f"hae j11 {hae[11]:.1f} >= best {hae_best:.1f} - {HAE_SLACK:g}: {hae_ok} [{curve}]")
    assert phqa_ok and hae_ok


def test_criterion_6_property_suites(tmp_path):
    import test_featurizer
    import test_inference
    import test_model
    import test_trainer
    from convqa.trainer import checkpoint_bytes, parse_checkpoint, train
    from helpers import synth_windows, tiny_model

    def checkpoint_round_trip():
        _, vocab, windows = synth_windows(seed=4)
        result = train(windows, tiny_model(len(vocab)), TrainConfig(total_steps=5, lr=1e-3, batch_size=4))
        raw = checkpoint_bytes(result.checkpoint)
        assert checkpoint_bytes(parse_checkpoint(raw)) == raw

    suites = {
        "softmax normalization": test_model.test_softmax_normalized_and_shift_invariant,
        "argmax shift invariance": test_model.test_argmax_shift_invariant,
        "zero-HAE bit identity": test_model.test_zero_hae_bit_identical_to_plain_model,
        "featurizer coverage/labels x1000": test_featurizer.test_coverage_and_label_round_trip,
        "best_span brute force": test_inference.test_best_span_matches_brute_force,
        "checkpoint round trip": checkpoint_round_trip,
        "resume == uninterrupted (100 steps)": lambda: test_trainer.test_resume_matches_uninterrupted(tmp_path),
    }
    outcomes = {}
    for name, fn in suites.items():
        try:
            fn()
            outcomes[name] = True
        except Exception as exc:  # report every suite before failing
            outcomes[name] = False
            print(f"  {name}: {exc!r}")
    passed = all(outcomes.values())
    record(6, "property suites", passed,
           ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in outcomes.items()))
    assert passed


def test_criterion_7_determinism(tmp_path):
    synth = SynthConfig(n_dialogs=20, turns_per_dialog=3, passage_len_tokens=24, seed=5)
    data, vocab_path = tmp_path / "d.json", tmp_path / "v.txt"
    save_dataset(generate(synth), data)
    save_vocab(synth_vocab(synth), vocab_path)
    logs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli_main(["train", "--data", str(data), "--vocab", str(vocab_path), "--out", str(out),
                         "--total-steps", str(DETERMINISM_STEPS), "--seed", "7", "--max-seq-len", "48",
                         "--stride", "16", "--max-question-len", "16", "--hidden", "16", "--layers", "2",
                         "--heads", "2", "--j", "2", "--lr", "1e-3"]) == 0
        logs.append((out / "metrics.jsonl").read_bytes())
    n_lines = len(logs[0].splitlines())
    passed = logs[0] == logs[1] and n_lines == DETERMINISM_STEPS
    record(7, "determinism", passed,
           f"metrics.jsonl byte-identical: {logs[0] == logs[1]}, {n_lines} steps logged")
    assert passed


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
