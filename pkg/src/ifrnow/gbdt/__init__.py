"""Gradient-boosted decision trees for binary IFR classification."""
from .io import FORMAT_VERSION, load_model, save_model
from .model import (
    Model,
    TrainConfig,
    Tree,
    auc,
    compute_scale_pos_weight,
    logistic_loss,
    predict_margin,
    predict_proba,
    sigmoid,
    train,
)

__all__ = [
    "FORMAT_VERSION",
    "Model",
    "TrainConfig",
    "Tree",
    "auc",
    "compute_scale_pos_weight",
    "load_model",
    "logistic_loss",
    "predict_margin",
    "predict_proba",
    "save_model",
    "sigmoid",
    "train",
]
