"""Experiment harness: configuration, runs, records and reports."""

from .config import ExperimentConfig, config_from_dict, load_config, save_config
from .experiment import (
    Lab, annotation_efficiency_curve, bench_ig_speed, crossing_ratio, evaluate, kfold_split, make_plants,
    run_experiment, summarize, train_fold, train_reference, write_outputs,
)
from .stats import mean_ci, significance_test

__all__ = [
    "ExperimentConfig", "Lab", "annotation_efficiency_curve", "bench_ig_speed", "config_from_dict",
    "crossing_ratio", "evaluate", "kfold_split", "load_config", "make_plants", "mean_ci", "run_experiment",
    "save_config", "significance_test", "summarize", "train_fold", "train_reference", "write_outputs",
]
