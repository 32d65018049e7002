"""Small fixtures shared by the training-related tests."""

from convqa.featurizer import Featurizer, FeaturizerConfig, labeled
from convqa.history import SelectorConfig, build_instances
from convqa.model import ModelConfig
from convqa.synthdata import SynthConfig, generate, synth_vocab
from convqa.tokenizer import Tokenizer

TINY_FEATS = FeaturizerConfig(max_seq_len=32, doc_stride=8, max_question_len=8, history_mode="hae")


def tiny_model(vocab_size, **kw):
    base = dict(hidden=16, layers=1, heads=2, max_positions=32, dropout_rate=0.1)
    return ModelConfig(vocab_size=vocab_size, **{**base, **kw})


def synth_windows(n_dialogs=8, turns=2, seed=0, feats=TINY_FEATS, j=1):
    cfg = SynthConfig(n_dialogs=n_dialogs, turns_per_dialog=turns, passage_len_tokens=16, seed=seed)
    dialogs = generate(cfg)
    vocab = synth_vocab(cfg)
    windows = Featurizer(Tokenizer(vocab), feats).encode_all(build_instances(dialogs, SelectorConfig(j=j)))
    return dialogs, vocab, labeled(windows)
