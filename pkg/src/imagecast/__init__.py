"""Forecast combination driven by image features of time series.

Pipeline: series -> recurrence-plot image -> local descriptors -> codebook
codes -> pooled feature vector -> boosted weight model -> combined forecast,
scored with the standard competition metrics.
"""

from .codebook import Codebook, load_codebook, save_codebook, train_codebook
from .combiner import (
    HyperParams,
    WeightModel,
    combine_forecasts,
    cv_search,
    load_model,
    predict_weights,
    save_model,
    softmax_weights,
    train,
)
from .config import RunConfig, format_config, load_config, parse_config
from .forecasters import ForecastSet, run_method
from .llc import code, code_all
from .metrics import LossMatrix, Report, aggregate, build_loss_matrix, mase, owa_contrib, smape
from .pipeline import evaluate, featurize, forecast, frequency_group, train_model
from .rp import GrayImage, RecurrenceMatrix, encode_series, recurrence_matrix, render
from .series import TimeSeries, load_corpus, load_metadata, split_train_test
from .sift import Keypoint, build_dog_pyramid, extract
from .spm import pool, read_features, write_features

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "ForecastSet",
    "GrayImage",
    "HyperParams",
    "Keypoint",
    "LossMatrix",
    "RecurrenceMatrix",
    "Report",
    "RunConfig",
    "TimeSeries",
    "WeightModel",
    "aggregate",
    "build_dog_pyramid",
    "build_loss_matrix",
    "code",
    "code_all",
    "combine_forecasts",
    "cv_search",
    "encode_series",
    "evaluate",
    "extract",
    "featurize",
    "forecast",
    "format_config",
    "frequency_group",
    "load_codebook",
    "load_config",
    "load_corpus",
    "load_metadata",
    "load_model",
    "mase",
    "owa_contrib",
    "parse_config",
    "pool",
    "predict_weights",
    "read_features",
    "recurrence_matrix",
    "render",
    "run_method",
    "save_codebook",
    "save_model",
    "smape",
    "softmax_weights",
    "split_train_test",
    "train",
    "train_codebook",
    "train_model",
    "write_features",
]
