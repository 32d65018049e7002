"""Command-line entry points: synth, train, predict, evaluate, sweep."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from .corpus import DatasetError, load_dataset, save_dataset
from .featurizer import EncodingError, FeaturizerConfig, HistoryMode
from .history import SelectorConfig
from .inference import NoValidSpanError, PredictConfig, write_predictions
from .metrics import EvaluationError, evaluate_files
from .pipeline import RunSpec, predict, score, spec_from_checkpoint, train_model
from .synthdata import SynthConfig, generate, synth_vocab
from .tokenizer import VocabError, build_vocab, load_vocab, save_vocab
from .trainer import CheckpointError, TrainConfig, TrainingError, load_checkpoint

logger = logging.getLogger("convqa")

# Defaults follow the reference BERT fine-tuning setup; model size is desk-scale.
DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "history_mode": "hae",
    "j": 6,
    "history_source": "gold",
    "max_seq_len": 384,
    "stride": 128,
    "max_question_len": 64,
    "max_answer_len": 30,
    "batch_size": 12,
    "lr": 3e-5,
    "total_steps": None,
    "checkpoint_every": 1000,
    "warmup_fraction": 0.1,
    "weight_decay": 0.01,
    "clip_norm": 1.0,
    "hidden": 64,
    "layers": 2,
    "heads": 4,
    "ffn_size": 0,
    "dropout": 0.1,
    "dtype": "float32",
}
_INT_KEYS = {"seed", "j", "max_seq_len", "stride", "max_question_len", "max_answer_len",
             "batch_size", "total_steps", "checkpoint_every", "hidden", "layers", "heads", "ffn_size"}
_FLOAT_KEYS = {"lr", "warmup_fraction", "weight_decay", "clip_norm", "dropout"}

ERRORS = (DatasetError, VocabError, EncodingError, CheckpointError, TrainingError,
          EvaluationError, NoValidSpanError, ValueError, OSError)


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str) -> Any:
    value = raw.strip().strip('"').strip("'")
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return None if value.lower() in ("none", "off") else float(value)
    return value


def read_config(path: str | Path) -> dict[str, Any]:
    """Flat ``key = value`` file; ``#`` starts a comment. Dashes in keys are allowed."""
    settings: dict[str, Any] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        key = key.strip().replace("-", "_")
        if not sep or key not in DEFAULTS:
            raise ConfigError(f"{path}:{n}: unrecognized setting {line!r}")
        try:
            settings[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: bad value for {key}: {exc}") from exc
    return settings


def resolve_settings(args: argparse.Namespace) -> dict[str, Any]:
    """flag > config file > default."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if getattr(args, "no_clip", False):
        settings["clip_norm"] = None
    return settings


def spec_from_settings(s: dict[str, Any]) -> RunSpec:
    if s["total_steps"] is None:
        raise ConfigError("total_steps must be set (config file or --total-steps)")
    return RunSpec(
        featurizer=FeaturizerConfig(
            max_seq_len=s["max_seq_len"],
            doc_stride=s["stride"],
            max_question_len=s["max_question_len"],
            history_mode=HistoryMode(s["history_mode"]),
        ),
        selector=SelectorConfig(j=s["j"]),
        model={
            "hidden": s["hidden"],
            "layers": s["layers"],
            "heads": s["heads"],
            "ffn_size": s["ffn_size"],
            "dropout_rate": s["dropout"],
            "seed": s["seed"],
            "dtype": s["dtype"],
        },
        train=TrainConfig(
            total_steps=s["total_steps"],
            lr=s["lr"],
            batch_size=s["batch_size"],
            checkpoint_every=s["checkpoint_every"],
            warmup_fraction=s["warmup_fraction"],
            weight_decay=s["weight_decay"],
            clip_norm=s["clip_norm"],
            seed=s["seed"],
        ),
        predict=PredictConfig(max_answer_len=s["max_answer_len"], history_source=s["history_source"]),
    )


def _load(args, path):
    return load_dataset(path, append_cannot_answer=args.append_cannot_answer, native_quac=args.native_quac)


def _vocab_for(args, dialogs):
    if args.vocab:
        return load_vocab(args.vocab)
    texts = [d.passage.text for d in dialogs] + [t.question for d in dialogs for t in d.turns]
    return build_vocab(texts)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    config = SynthConfig(
        n_dialogs=args.n_dialogs,
        turns_per_dialog=args.turns,
        passage_len_tokens=args.passage_len,
        vocab_size=args.vocab_size,
        seed=args.seed,
        coreference_rate=args.coref_rate,
        answer_len=args.answer_len,
    )
    save_dataset(generate(config), args.out)
    if args.vocab_out:
        save_vocab(synth_vocab(config), args.vocab_out)
    return 0


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    spec = spec_from_settings(settings)
    dialogs = _load(args, args.data)
    vocab = _vocab_for(args, dialogs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train_model(dialogs, vocab, spec, out_dir=out, resume=resume)
    save_vocab(vocab, out / "vocab.txt")
    last = result.log[-1] if result.log else {}
    logger.info("trained %d steps, final loss %.4f", last.get("step", 0), last.get("loss", float("nan")))
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    spec, vocab = spec_from_checkpoint(ckpt)
    if args.vocab:
        given = load_vocab(args.vocab)
        if len(given) != ckpt.model_config.vocab_size:
            raise CheckpointError(
                f"vocabulary size {len(given)} does not match checkpoint vocab_size "
                f"{ckpt.model_config.vocab_size}"
            )
        vocab = given
    predict_config = spec.predict
    if args.history_source is not None:
        predict_config = replace(predict_config, history_source=args.history_source)
    if args.max_answer_len is not None:
        predict_config = replace(predict_config, max_answer_len=args.max_answer_len)
    spec = replace(spec, predict=predict_config)
    dialogs = _load(args, args.data)
    predictions = predict(dialogs, ckpt.params, ckpt.model_config, vocab, spec)
    write_predictions(predictions, args.out)
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate_files(
        args.predictions,
        args.data,
        max_over_references=not args.first_reference_only,
        min_human_f1=args.min_human_f1,
        native_quac=args.native_quac,
    )
    text = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


SWEEP_FIELDS = ["mode", "j", "seed", "f1", "heq_q", "heq_d", "n_questions", "status", "error"]


def sweep_cells(modes: Sequence[str], j_values: Sequence[int], seeds: Sequence[int]):
    """(mode, j, seed) triples; the history-free mode ignores j and gets one cell per seed."""
    cells = []
    for mode in modes:
        for seed in seeds:
            if HistoryMode(mode) is HistoryMode.NONE:
                cells.append((mode, 0, seed))
            else:
                cells.extend((mode, j, seed) for j in j_values)
    return sorted(cells, key=lambda c: (list(modes).index(c[0]), c[1], c[2]))


def run_sweep_cell(args: tuple) -> dict[str, Any]:
    spec, mode, j, seed, train_dialogs, dev_dialogs, vocab, out_dir = args
    from .pipeline import train_and_evaluate

    row: dict[str, Any] = {"mode": mode, "j": j, "seed": seed}
    try:
        report, _ = train_and_evaluate(
            train_dialogs, dev_dialogs, vocab, spec.with_cell(mode, j, seed), out_dir=out_dir
        )
        row.update(
            f1=round(report.f1, 4), heq_q=round(report.heq_q, 4), heq_d=round(report.heq_d, 4),
            n_questions=report.n_questions, status="ok", error="",
        )
    except Exception as exc:  # one failing cell must not stop the sweep
        logger.exception("sweep cell %s j=%s seed=%s failed", mode, j, seed)
        row.update(f1="", heq_q="", heq_d="", n_questions="", status="error", error=str(exc))
    return row


def run_sweep(
    spec: RunSpec,
    train_dialogs,
    dev_dialogs,
    vocab,
    j_values: Sequence[int],
    seeds: Sequence[int],
    modes: Sequence[str] = ("hae", "phqa", "pha", "none"),
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> list[dict[str, Any]]:
    bad = [j for j in j_values if not 0 <= j <= 11]
    if bad:
        raise ConfigError(f"j values must lie in 0..11, got {bad}")
    jobs = []
    for mode, j, seed in sweep_cells(modes, j_values, seeds):
        cell_dir = None
        if out_dir is not None:
            cell_dir = Path(out_dir) / "cells" / f"{mode}-j{j}-s{seed}"
        jobs.append((spec, mode, j, seed, train_dialogs, dev_dialogs, vocab, cell_dir))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_sweep_cell, jobs))
    else:
        rows = [run_sweep_cell(job) for job in jobs]
    if out_dir is not None:
        write_sweep_csv(rows, Path(out_dir) / "sweep.csv")
    return rows


def write_sweep_csv(rows, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_sweep(args) -> int:
    settings = resolve_settings(args)
    spec = spec_from_settings(settings)
    train_dialogs = _load(args, args.data)
    dev_dialogs = _load(args, args.dev_data) if args.dev_data else train_dialogs
    vocab = _vocab_for(args, train_dialogs)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        HistoryMode(m)
    rows = run_sweep(
        spec, train_dialogs, dev_dialogs, vocab,
        j_values=_int_list(args.j_values), seeds=_int_list(args.seeds),
        modes=modes, out_dir=args.out, workers=args.workers,
    )
    for row in rows:
        print(f"{row['mode']:>5} j={row['j']:<2} seed={row['seed']:<3} F1={row['f1']} {row['status']}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--append-cannot-answer", action="store_true",
                   help="append ' CANNOTANSWER' to every passage")
    p.add_argument("--native-quac", action="store_true", help="input uses QuAC v0.2 field names")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--vocab", help="vocabulary file (default: built from the training data)")
    p.add_argument("--seed", type=int)
    p.add_argument("--history-mode", choices=[m.value for m in HistoryMode])
    p.add_argument("--j", type=int, help="number of immediate previous turns to use")
    p.add_argument("--history-source", choices=["gold", "predicted"])
    p.add_argument("--max-seq-len", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--max-question-len", type=int)
    p.add_argument("--max-answer-len", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--total-steps", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--warmup-fraction", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--no-clip", action="store_true", help="disable global-norm gradient clipping")
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--ffn-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--dtype", choices=["float32", "float64"])
    _add_data_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convqa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic coreference dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out")
    p.add_argument("--n-dialogs", type=int, default=200)
    p.add_argument("--turns", type=int, default=4)
    p.add_argument("--passage-len", type=int, default=40)
    p.add_argument("--vocab-size", type=int, default=40)
    p.add_argument("--coref-rate", type=float, default=1.0)
    p.add_argument("--answer-len", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="answer every turn of a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="predictions JSON-lines file")
    p.add_argument("--vocab")
    p.add_argument("--history-source", choices=["gold", "predicted"])
    p.add_argument("--max-answer-len", type=int)
    _add_data_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions (F1, HEQ-Q, HEQ-D)")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--min-human-f1", type=float, help="drop questions below this human F1")
    p.add_argument("--first-reference-only", action="store_true")
    p.add_argument("--native-quac", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train/evaluate over history modes, j values and seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--dev-data")
    p.add_argument("--out", required=True)
    p.add_argument("--j-values", default="0,1,2,3,4,5,6,7,8,9,10,11")
    p.add_argument("--seeds", default="0")
    p.add_argument("--modes", default="hae,phqa,pha,none")
    p.add_argument("--workers", type=int, default=1)
    _add_run_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
