"""Predict morning congestion start times on road segments from household electricity patterns."""

from .baselines import fit_arma, historical_mean_cst, predict_cst_arma, select_order_aic
from .clustering import PatternModel, fit_patterns, gap_select_k, kmeans, seasonal_split
from .config import PipelineConfig
from .congestion import CongestionParams, CongestionRecord, extract_cst, extract_duration, extract_records
from .data import ProfilePanel, TimeGrid, TravelTimeSeries, load_electricity_csv, load_travel_time_csv
from .errors import (
    ConfigError,
    CongestcastError,
    ContractError,
    DataError,
    FitError,
    InfeasibleError,
    NumericalError,
)
from .features import FeatureMatrix, aggregate_features, disaggregate_features, mixed_features
from .regression import FittedPredictor, fit_lasso, fit_ols, nested_cv_evaluate, select_alpha
from .similarity import cosine, jaccard, pairwise_similarity
from .synth import ScenarioSpec, generate

__version__ = "0.1.0"

__all__ = [
    "fit_arma",
    "historical_mean_cst",
    "predict_cst_arma",
    "select_order_aic",
    "PatternModel",
    "fit_patterns",
    "gap_select_k",
    "kmeans",
    "seasonal_split",
    "PipelineConfig",
    "CongestionParams",
    "CongestionRecord",
    "extract_cst",
    "extract_duration",
    "extract_records",
    "ProfilePanel",
    "TimeGrid",
    "TravelTimeSeries",
    "load_electricity_csv",
    "load_travel_time_csv",
    "ConfigError",
    "CongestcastError",
    "ContractError",
    "DataError",
    "FitError",
    "InfeasibleError",
    "NumericalError",
    "FeatureMatrix",
    "aggregate_features",
    "disaggregate_features",
    "mixed_features",
    "FittedPredictor",
    "fit_lasso",
    "fit_ols",
    "nested_cv_evaluate",
    "select_alpha",
    "cosine",
    "jaccard",
    "pairwise_similarity",
    "ScenarioSpec",
    "generate",
]
