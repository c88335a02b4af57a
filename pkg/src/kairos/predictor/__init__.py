"""Attention-interpolation quantile throughput predictor."""

from .losses import loss_quantile, loss_smooth, loss_smooth_latent, loss_smooth_prediction
from .model import (Batch, ModelConfig, MtanTP, Normalization, QuantileModel, attention_weights,
                    make_batch, mtan_encode, time_embed)
from .training import TrainingDivergence, load_model, save_model, train
from .window import (FEATURES, ObservationWindow, QuantilePrediction, reference_points,
                     window_from_history)

__all__ = [
    "Batch", "FEATURES", "ModelConfig", "MtanTP", "Normalization", "ObservationWindow",
    "QuantileModel", "QuantilePrediction", "TrainingDivergence", "attention_weights", "load_model",
    "loss_quantile", "loss_smooth", "loss_smooth_latent", "loss_smooth_prediction", "make_batch",
    "mtan_encode", "reference_points", "save_model", "time_embed", "train", "window_from_history",
]
