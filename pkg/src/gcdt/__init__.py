"""GCDT: a global-context enhanced deep-transition sequence labeller in numpy."""

from .conll import Sentence, Vocabs, build_vocabs, read_conll, to_bioes
from .decoding import beam_search, greedy_decode, predict
from .evaluation import EvalReport, evaluate, extract_chunks
from .model import GCDT, ModelConfig, param_count
from .training import TrainConfig, aggregate_runs, load_checkpoint, save_checkpoint, train

__all__ = [
    "GCDT", "EvalReport", "ModelConfig", "Sentence", "TrainConfig", "Vocabs",
    "aggregate_runs", "beam_search", "build_vocabs", "evaluate", "extract_chunks",
    "greedy_decode", "load_checkpoint", "param_count", "predict", "read_conll",
    "save_checkpoint", "to_bioes", "train",
]

__version__ = "0.1.0"
