"""Reference throughput predictors: harmonic mean, RobustMPC discounting, plain LSTM."""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .predictor.model import (Batch, ModelConfig, Normalization, QuantileModel, init_head,
                              init_lstm, lstm_last, quantile_head)


def hm_predict(throughputs: Sequence[float]) -> float:
    """Harmonic mean of past throughputs (Mbps)."""
    if len(throughputs) == 0:
        raise ValueError("need at least one throughput sample")
    if any(c <= 0 for c in throughputs):
        raise ValueError("throughputs must be positive")
    return len(throughputs) / sum(1.0 / c for c in throughputs)


def relative_error(predicted: float, actual: float) -> float:
    return abs(predicted - actual) / actual


def robust_hm_predict(throughputs: Sequence[float], errors: Sequence[float]) -> float:
    """Harmonic mean divided by one plus the largest recent relative error."""
    base = hm_predict(throughputs)
    return base / (1.0 + max(errors, default=0.0))


class ErrorTracker:
    """Sliding window of relative prediction errors (RobustMPC discount)."""

    def __init__(self, horizon: int = 5):
        self.errors: deque[float] = deque(maxlen=horizon)
        self.pending: float | None = None

    def reset(self) -> None:
        self.errors.clear()
        self.pending = None

    def observe(self, actual: float) -> None:
        if self.pending is not None:
            self.errors.append(relative_error(self.pending, actual))
            self.pending = None

    def expect(self, predicted: float) -> None:
        self.pending = predicted

    def discount(self, predicted: float) -> float:
        return predicted / (1.0 + max(self.errors, default=0.0))


class PlainLSTM(QuantileModel):
    """LSTM over the raw observation sequence, oldest chunk first; no time information."""

    kind = "plain-lstm"

    @classmethod
    def initialize(cls, cfg: ModelConfig, norm: Normalization, seed: int) -> "PlainLSTM":
        rng = np.random.default_rng(seed)
        arrays = init_lstm(rng, cfg.features, cfg.lstm_hidden)
        arrays.update(init_head(rng, cfg.lstm_hidden, cfg.quantiles))
        return cls(cfg, norm, arrays)

    def forward(self, batch: Batch) -> tuple[Tensor, None]:
        seq = Tensor(batch.phi[:, ::-1, :].copy())
        h = lstm_last(seq, self.params, self.config.lstm_hidden)
        return quantile_head(h, self.params, self.config.quantiles), None


def lstm_predict(model: PlainLSTM, window) -> float:
    """Median throughput forecast (Mbps)."""
    return model.predict(window).median


def lstm_train(train_windows, val_windows, config, normalization: Normalization):
    from .predictor.training import train

    return train(train_windows, val_windows, config.replace(predictor_kind="plain-lstm"), normalization)


__all__ = ["ErrorTracker", "PlainLSTM", "hm_predict", "lstm_predict", "lstm_train", "relative_error",
           "robust_hm_predict"]
