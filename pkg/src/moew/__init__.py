"""Metric-optimized example weights.

Train example-weighted models where the low-dimensional weighting parameters
are searched (batched GP-UCB, random sampling, or an epsilon-cover grid) to
maximize an arbitrary black-box validation metric.
"""

from .data import Dataset, ToySpec, generate_toy, load_csv, transform_labels
from .driver import (CsvSource, EmbeddingConfig, ExperimentConfig, RunRecord,
                     run_baseline, run_experiment, run_moew, run_repeats)
from .metrics import EvalBundle, MetricSpec, evaluate_metric
from .nn import MlpArchitecture, TrainConfig, train_weighted
from .search import BucbConfig
from .weights import ImportanceTable, baseline_weights, estimate_importance, eval_weights

__version__ = "0.1.0"

__all__ = [
    "BucbConfig", "CsvSource", "Dataset", "EmbeddingConfig", "EvalBundle",
    "ExperimentConfig", "ImportanceTable", "MetricSpec", "MlpArchitecture",
    "RunRecord", "ToySpec", "TrainConfig", "baseline_weights",
    "estimate_importance", "eval_weights", "evaluate_metric", "generate_toy",
    "load_csv", "run_baseline", "run_experiment", "run_moew", "run_repeats",
    "train_weighted", "transform_labels",
]
