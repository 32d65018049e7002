"""End-to-end helpers shared by the CLI and the experiment sweeps."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from .corpus import Dialog
from .featurizer import FeaturizerConfig, Featurizer, HistoryMode
from .history import SelectorConfig, build_instances
from .inference import PredictConfig, SpanPrediction, predict_dataset
from .metrics import EvalReport, EvalExample, evaluate
from .model import ModelConfig, ModelParams
from .tokenizer import Tokenizer, Vocab
from .trainer import Checkpoint, TrainConfig, TrainResult, train


@dataclass(frozen=True)
class RunSpec:
    """Everything needed to featurize, train and predict, apart from the data."""

    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    model: dict[str, Any] = field(default_factory=dict)  # ModelConfig kwargs minus vocab_size
    train: TrainConfig = field(default_factory=lambda: TrainConfig(total_steps=1000))
    predict: PredictConfig = field(default_factory=PredictConfig)

    def with_cell(self, mode: HistoryMode | str, j: int, seed: int) -> "RunSpec":
        return replace(
            self,
            featurizer=replace(self.featurizer, history_mode=HistoryMode(mode)),
            selector=replace(self.selector, j=j),
            model={**self.model, "seed": seed},
            train=replace(self.train, seed=seed),
        )


def model_config_for(spec: RunSpec, vocab: Vocab) -> ModelConfig:
    kwargs = dict(spec.model)
    kwargs.setdefault("max_positions", spec.featurizer.max_seq_len)
    return ModelConfig(vocab_size=len(vocab), **kwargs)


def checkpoint_metadata(spec: RunSpec, vocab: Vocab) -> dict[str, Any]:
    return {
        "featurizer": {**asdict(spec.featurizer), "history_mode": spec.featurizer.history_mode.value},
        "selector": asdict(spec.selector),
        "predict": {**asdict(spec.predict), "history_source": spec.predict.history_source.value},
        "vocab": list(vocab.tokens),
    }


def spec_from_checkpoint(ckpt: Checkpoint) -> tuple[RunSpec, Vocab]:
    meta = ckpt.metadata
    spec = RunSpec(
        featurizer=FeaturizerConfig(**meta["featurizer"]),
        selector=SelectorConfig(**meta["selector"]),
        train=ckpt.train_config,
        predict=PredictConfig(**meta["predict"]),
    )
    return spec, Vocab(tuple(meta["vocab"]))


def training_windows(dialogs: Sequence[Dialog], vocab: Vocab, spec: RunSpec):
    featurizer = Featurizer(Tokenizer(vocab), spec.featurizer)
    return featurizer.encode_all(build_instances(dialogs, spec.selector))


def train_model(
    dialogs: Sequence[Dialog],
    vocab: Vocab,
    spec: RunSpec,
    out_dir: str | Path | None = None,
    resume: Checkpoint | None = None,
) -> TrainResult:
    windows = training_windows(dialogs, vocab, spec)
    return train(
        windows,
        model_config_for(spec, vocab),
        spec.train,
        out_dir=out_dir,
        resume=resume,
        metadata=checkpoint_metadata(spec, vocab),
    )


def predict(
    dialogs: Sequence[Dialog],
    params: ModelParams,
    model_config: ModelConfig,
    vocab: Vocab,
    spec: RunSpec,
) -> list[SpanPrediction]:
    featurizer = Featurizer(Tokenizer(vocab), spec.featurizer)
    return predict_dataset(dialogs, params, model_config, featurizer, spec.selector, spec.predict)


def score(dialogs: Sequence[Dialog], predictions: Sequence[SpanPrediction]) -> EvalReport:
    by_key = {(p.dialog_id, p.turn_index): p.text for p in predictions}
    examples = [
        EvalExample(
            dialog_id=d.dialog_id,
            turn_index=t.turn_index,
            prediction=by_key[(d.dialog_id, t.turn_index)],
            references=tuple(r.text for r in t.references),
            human_f1=t.human_f1,
        )
        for d in dialogs
        for t in d.turns
    ]
    return evaluate(examples)


def train_and_evaluate(
    train_dialogs: Sequence[Dialog],
    dev_dialogs: Sequence[Dialog],
    vocab: Vocab,
    spec: RunSpec,
    out_dir: str | Path | None = None,
) -> tuple[EvalReport, TrainResult]:
    result = train_model(train_dialogs, vocab, spec, out_dir=out_dir)
    ckpt = result.checkpoint
    preds = predict(dev_dialogs, ckpt.params, ckpt.model_config, vocab, spec)
    return score(dev_dialogs, preds), result
