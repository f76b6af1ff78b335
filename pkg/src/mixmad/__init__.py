"""Multilevel anomaly detection for mixed-type tabular data."""

from .data import (
    ColumnSpec,
    DataError,
    Dataset,
    Schema,
    SchemaError,
    SynthConfig,
    apply_normalizer,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    save_csv,
)
from .dbn import AbstractionChain, abstract_deterministic, abstract_stochastic, abstracted_free_energy
from .ensemble import EnsembleModel, ScoreReport, aggregate_pnorm, fit, flag_anomalies, score
from .metrics import auc, f_score, ndcg_at_t
from .rbm import MvRbm, TrainConfig, TrainingError, free_energy, train

__version__ = "0.1.0"

__all__ = [
    "abstract_deterministic",
    "abstract_stochastic",
    "abstracted_free_energy",
    "AbstractionChain",
    "aggregate_pnorm",
    "apply_normalizer",
    "auc",
    "ColumnSpec",
    "DataError",
    "Dataset",
    "EnsembleModel",
    "f_score",
    "fit",
    "fit_normalizer",
    "flag_anomalies",
    "free_energy",
    "generate_synthetic",
    "load_csv",
    "MvRbm",
    "ndcg_at_t",
    "save_csv",
    "Schema",
    "SchemaError",
    "score",
    "ScoreReport",
    "SynthConfig",
    "train",
    "TrainConfig",
    "TrainingError",
]
