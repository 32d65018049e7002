"""Conversational question answering with history answer embedding on a small numpy BERT."""

from .corpus import AnswerSpan, Dialog, Passage, Turn, load_dataset
from .featurizer import EncodedWindow, Featurizer, FeaturizerConfig, HistoryMode
from .history import ConvQAInstance, SelectorConfig, build_instance
from .inference import PredictConfig, SpanPrediction, best_span, predict_dialog
from .metrics import EvalReport, evaluate, token_f1
from .model import ModelConfig, forward, forward_backward, init_params
from .tokenizer import Tokenizer, Vocab
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AnswerSpan", "Dialog", "Passage", "Turn", "load_dataset",
    "EncodedWindow", "Featurizer", "FeaturizerConfig", "HistoryMode",
    "ConvQAInstance", "SelectorConfig", "build_instance",
    "PredictConfig", "SpanPrediction", "best_span", "predict_dialog",
    "EvalReport", "evaluate", "token_f1",
    "ModelConfig", "forward", "forward_backward", "init_params",
    "Tokenizer", "Vocab",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
]
