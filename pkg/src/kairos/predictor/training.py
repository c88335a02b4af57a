"""Minibatch Adam training of quantile predictors, plus checkpoint (de)serialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import NumericalError
from ..config import RunConfig
from .checkpoint import decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint
from .losses import loss_quantile, loss_smooth, loss_smooth_prediction
from .model import Batch, ModelConfig, MtanTP, Normalization, QuantileModel, make_batch
from .window import ObservationWindow


class TrainingDivergence(NumericalError):
    """The training loss or its gradients stopped being finite."""


@dataclass
class TrainResult:
    model: QuantileModel
    log: list[dict] = field(default_factory=list)
    config: RunConfig | None = None

    def to_bytes(self) -> bytes:
        return model_to_bytes(self.model, self.config, self.log)


def model_class(kind: str):
    if kind == "mtan-tp":
        return MtanTP
    if kind == "plain-lstm":
        from ..baselines import PlainLSTM

        return PlainLSTM
    raise ValueError(f"unknown predictor kind {kind!r}")


def build_model(config: RunConfig, norm: Normalization) -> QuantileModel:
    return model_class(config.predictor_kind).initialize(ModelConfig.from_run_config(config), norm, config.seed)


def objective(model: QuantileModel, batch: Batch, config: RunConfig):
    """Total loss and its parts (as floats) for one minibatch."""
    out, E = model.forward(batch)
    levels = model.config.quantiles
    lq = loss_quantile(out, batch.truth, levels, as_printed=config.quantile_loss == "as-printed")
    parts = {"quantile": lq.item()}
    loss = lq
    if config.smooth_loss:
        median = out[:, levels.index(0.5)]
        k = batch.u.shape[1]
        if E is None:
            # no interpolated latent rows in the plain LSTM: only the prediction-level term applies
            ls = loss_smooth_prediction(median, batch.throughput_sum, config.theta, k) * 0.1
        else:
            ls = loss_smooth(median, batch.throughput_sum, E, config.theta, k, config.sf_literal)
        parts["smooth"] = ls.item()
        loss = loss + ls
    parts["total"] = loss.item()
    return loss, parts


def median_mape(model: QuantileModel, batch: Batch) -> float:
    with ad.no_grad():
        out, _ = model.forward(batch)
    med = out.data[:, model.config.quantiles.index(0.5)] * model.norm.throughput_scale
    med = np.maximum(med, 0.01)
    truth = batch.truth * model.norm.throughput_scale
    return float(100.0 * np.mean(np.abs(med - truth) / truth))


def evaluate_loss(model: QuantileModel, batch: Batch, config: RunConfig) -> float:
    with ad.no_grad():
        _, parts = objective(model, batch, config)
    return parts["total"]


def train(train_windows: Sequence[ObservationWindow], val_windows: Sequence[ObservationWindow],
          config: RunConfig, norm: Normalization) -> TrainResult:
    """Minimise quantile loss (+ smoothness terms when enabled) with Adam.

    Returns the parameters of the epoch with the lowest validation loss
    (training loss when there is no validation split). Deterministic for a
    given seed and data.
    """
    if not train_windows:
        raise ValueError("empty training set")
    k = train_windows[0].k
    if k != config.k or any(w.k != k for w in train_windows):
        raise ValueError(f"windows must all have k={config.k}")
    model = build_model(config, norm)
    data = make_batch(train_windows, norm)
    if data.truth is None:
        raise ValueError("training windows need ground-truth throughput")
    val = make_batch(val_windows, norm) if val_windows else None
    params = model.parameters()
    opt = ad.Adam(params, lr=config.lr)
    rng = np.random.default_rng([config.seed, 1])
    n = len(data)
    log: list[dict] = []
    best_score, best_arrays = math.inf, model.arrays()
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch = data.subset(idx)
            opt.zero_grad()
            try:
                loss, parts = objective(model, batch, config)
                ad.backward(loss)
                ad.clip_grad_norm(params, config.clip_norm)
                opt.step()
            except NumericalError as exc:
                raise TrainingDivergence(
                    f"training diverged at epoch {epoch}, batch starting {start}: {exc}") from exc
            total += parts["total"] * len(idx)
            count += len(idx)
        entry = {"epoch": epoch, "train_loss": total / count}
        if val is not None:
            entry["val_loss"] = evaluate_loss(model, val, config)
            entry["val_mape"] = median_mape(model, val)
        log.append(entry)
        score = entry.get("val_loss", entry["train_loss"])
        if score < best_score:
            best_score, best_arrays = score, model.arrays()
    model.load_arrays(best_arrays)
    return TrainResult(model, log, config)


# ----------------------------------------------------------------- checkpoints


def model_to_bytes(model: QuantileModel, config: RunConfig | None = None, log: list | None = None) -> bytes:
    return encode_checkpoint(model.kind, model.config.to_dict(), model.norm.to_dict(), model.arrays(),
                             config.to_dict(include_execution=False) if config else None, log)


def model_from_bytes(blob: bytes) -> QuantileModel:
    header, arrays = decode_checkpoint(blob)
    return _build(header, arrays)


def _build(header: dict, arrays: dict) -> QuantileModel:
    cls = model_class(header["kind"])
    model_cfg = ModelConfig(**header["model"])
    model = cls(model_cfg, Normalization(**header["normalization"]), arrays)
    return model


def save_model(path, model: QuantileModel, config: RunConfig | None = None, log: list | None = None) -> None:
    write_checkpoint(path, model_to_bytes(model, config, log))


def load_model(path) -> QuantileModel:
    header, arrays = read_checkpoint(path)
    return _build(header, arrays)


def load_checkpoint_header(path) -> dict:
    return read_checkpoint(path)[0]
