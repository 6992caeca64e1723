"""Prefix-tuned transformer encoders with adaptive decision boundaries for open intent classification."""

from .adb import ADBConfig, BoundarySet, learn_boundaries, predict_open
from .data import OPEN, LabeledUtterance, SplitSpec, Vocabulary, make_split, synth_corpus, tokenize
from .encoder import EncoderConfig, TuningPlan, encode, trainable_param_stats
from .experiment import ExperimentConfig, parse_plan, run_experiment
from .metrics import MetricsReport, compute_metrics
from .model import IntentModel
from .prefix import PrefixConfig, PrefixMode
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ADBConfig",
    "BoundarySet",
    "EncoderConfig",
    "ExperimentConfig",
    "IntentModel",
    "LabeledUtterance",
    "MetricsReport",
    "OPEN",
    "PrefixConfig",
    "PrefixMode",
    "SplitSpec",
    "TrainConfig",
    "TuningPlan",
    "Vocabulary",
    "compute_metrics",
    "encode",
    "learn_boundaries",
    "make_split",
    "parse_plan",
    "predict_open",
    "run_experiment",
    "synth_corpus",
    "tokenize",
    "trainable_param_stats",
    "train",
]
