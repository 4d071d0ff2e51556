"""Training pipeline, gated inference, drift, evaluation and bundle persistence."""
from .bundle import FORMAT_VERSION, ModelBundle, bundle_bytes, crc64, load_bundle, save_bundle
from .drift import DriftReport, drift_score, js_divergence
from .inference import (
    Neighbor,
    PredictionResult,
    RankedResolution,
    confidence_of,
    knn_similar,
    predict,
    predict_many,
)
from .metrics import LabelScore, MetricsReport, classification_scores, confidence_histogram, evaluate
from .pipeline import train_pipeline
from .predlog import LOG_FIELDS, PredictionLogEntry, PredictionLogger, log_prediction

__all__ = [
    "FORMAT_VERSION", "DriftReport", "LOG_FIELDS", "LabelScore", "MetricsReport", "ModelBundle",
    "Neighbor", "PredictionLogEntry", "PredictionLogger", "PredictionResult", "RankedResolution",
    "bundle_bytes", "classification_scores", "confidence_histogram", "confidence_of", "crc64",
    "drift_score", "evaluate", "js_divergence", "knn_similar", "load_bundle", "log_prediction",
    "predict", "predict_many", "save_bundle", "train_pipeline",
]
