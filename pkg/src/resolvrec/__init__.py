"""Resolution recommendation for support tickets.

Topic-model, Siamese and index-embedding recommenders stacked by a
logistic-regression meta-learner, with confidence-gated fallback retrieval.
"""
from .config import AppConfig, load_config
from .corpus import Corpus, TicketRecord, clean, load_csv, split
from .engine import (
    ModelBundle,
    PredictionResult,
    drift_score,
    evaluate,
    knn_similar,
    load_bundle,
    predict,
    save_bundle,
    train_pipeline,
)
from .recommender import ResolutionRecommender

__version__ = "0.1.0"

__all__ = [
    "AppConfig", "Corpus", "ModelBundle", "PredictionResult", "ResolutionRecommender", "TicketRecord",
    "clean", "drift_score", "evaluate", "knn_similar", "load_bundle", "load_config", "load_csv",
    "predict", "save_bundle", "split", "train_pipeline",
]
