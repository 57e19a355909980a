"""Synthetic retrieval harness: task generation, recall evaluation, suites."""

from .experiments import (
    ABLATION_ROW_ORDER,
    EXPECTED_ACCURACY_ORDER,
    RECORD_COLUMNS,
    ExperimentConfig,
    ResultRecord,
    decode_answer,
    eval_recall,
    resolve_feature_map,
    run_ablation,
)
from .suite import DEFAULT_SUITE, ConfigError, load_config, run_suite, validate_config
from .synthetic import NiahInstance, SyntheticTaskSpec, gen_niah

__all__ = [
    "ABLATION_ROW_ORDER",
    "DEFAULT_SUITE",
    "EXPECTED_ACCURACY_ORDER",
    "RECORD_COLUMNS",
    "ConfigError",
    "ExperimentConfig",
    "NiahInstance",
    "ResultRecord",
    "SyntheticTaskSpec",
    "decode_answer",
    "eval_recall",
    "gen_niah",
    "load_config",
    "resolve_feature_map",
    "run_ablation",
    "run_suite",
    "validate_config",
]
