"""Residual-boosted deep CTR prediction.

A sigmoid-head classifier is trained, its signed prediction errors are
learned by dedicated tanh-head regressors, and the scaled predicted errors
are fed back to the classifier through appended placeholder feature
columns. The package also ships the surrounding experiment machinery:
chronological splits, sub-training carving, class weighting, cold-start
filtering, AUC/log-loss evaluation and a CLI harness.
"""

from .boosting import (XDBoostModel, append_placeholders, create_xdboost,
                       predict_xdboost, train_unboosted, train_xdboost)
from .data import (ClassWeights, DesignMatrix, FeatureSchema, FieldSpec,
                   InteractionRecord, SplitSpec, build_schema,
                   build_schema_and_encode, chronological_split, class_weights,
                   cold_start_filter, encode, ingest_csv, load_encoded_splits,
                   records_hash, save_encoded_splits, sub_training)
from .errors import (ConfigError, DataError, EvaluationError, TrainingError,
                     UsageError, XDBoostError)
from .kernels import BACKEND
from .metrics import MetricsReport, auc, evaluate, log_loss
from .models import BaseNet, BaseNetConfig, FitHistory, build_base_net, fm_pairwise
from .synth import SynthConfig, generate_records

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BaseNet",
    "BaseNetConfig",
    "ClassWeights",
    "ConfigError",
    "DataError",
    "DesignMatrix",
    "EvaluationError",
    "FeatureSchema",
    "FieldSpec",
    "FitHistory",
    "InteractionRecord",
    "MetricsReport",
    "SplitSpec",
    "SynthConfig",
    "TrainingError",
    "UsageError",
    "XDBoostError",
    "XDBoostModel",
    "append_placeholders",
    "auc",
    "build_base_net",
    "build_schema",
    "build_schema_and_encode",
    "chronological_split",
    "class_weights",
    "cold_start_filter",
    "create_xdboost",
    "encode",
    "evaluate",
    "fm_pairwise",
    "generate_records",
    "ingest_csv",
    "load_encoded_splits",
    "log_loss",
    "predict_xdboost",
    "records_hash",
    "save_encoded_splits",
    "sub_training",
    "train_unboosted",
    "train_xdboost",
    "__version__",
]
