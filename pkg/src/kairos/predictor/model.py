"""Attention-interpolation throughput predictor (mTAN-TP) and shared network pieces.

Forward pass for a batch of windows::

    time embeddings of reference offsets (queries) and sample offsets (keys)
    -> per-head softmax attention over samples -> interpolated features
    -> mix heads and features with P into k latent rows E (k x J)
    -> E * sigmoid(E W + b) + E -> LayerNorm
    -> LSTM over the rows, oldest reference point first
    -> two-layer MLP -> median plus softplus offsets per quantile level

All arithmetic runs on normalized inputs; the constants live in
:class:`Normalization` and travel with the checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from .window import OUTPUT_FLOOR, ObservationWindow, QuantilePrediction


@dataclass(frozen=True)
class Normalization:
    throughput_scale: float = 4.3  # Mbps
    buffer_scale: float = 60.0  # s
    rebuffer_scale: float = 4.0  # s
    latency_scale: float = 4.3
    time_scale: float = 4.0  # s

    @classmethod
    def for_setup(cls, max_bitrate: float, buffer_max: float, chunk_duration: float) -> "Normalization":
        return cls(max_bitrate, buffer_max, chunk_duration, max_bitrate, chunk_duration)

    @property
    def feature_scales(self) -> np.ndarray:
        return np.array([self.throughput_scale, self.buffer_scale, self.rebuffer_scale, self.latency_scale])

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ModelConfig:
    k: int = 8
    eta: float = 4.0
    heads: int = 4
    latent_dim: int = 32
    embed_dim: int = 16
    attn_dim: int = 1
    lstm_hidden: int = 32
    quantiles: tuple = (0.1, 0.5, 0.9)
    features: int = 4

    def __post_init__(self):
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        if 0.5 not in self.quantiles:
            raise ValueError("quantile levels must include the median")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2 (one linear + periodic dims)")

    @classmethod
    def from_run_config(cls, cfg) -> "ModelConfig":
        return cls(cfg.k, cfg.eta, cfg.heads, cfg.latent_dim, cfg.embed_dim, cfg.attn_dim,
                   cfg.lstm_hidden, cfg.quantiles)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantiles"] = list(self.quantiles)
        return d


@dataclass
class Batch:
    phi: np.ndarray  # (B, k, 4) normalized, newest first
    u: np.ndarray  # (B, k) normalized relative times
    u_hat: np.ndarray  # (k,) normalized reference offsets
    truth: np.ndarray | None  # (B,) normalized
    throughput_sum: np.ndarray  # (B,) normalized sum of window throughputs

    def __len__(self) -> int:
        return self.phi.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.phi[idx], self.u[idx], self.u_hat,
                     None if self.truth is None else self.truth[idx], self.throughput_sum[idx])


def make_batch(windows: Sequence[ObservationWindow], norm: Normalization) -> Batch:
    phi = np.stack([w.phi for w in windows]) / norm.feature_scales
    u = np.stack([w.u for w in windows]) / norm.time_scale
    u_hat = windows[0].u_hat / norm.time_scale
    truths = [w.truth for w in windows]
    truth = None if any(t is None for t in truths) else np.array(truths) / norm.throughput_scale
    return Batch(phi, u, u_hat, truth, phi[:, :, 0].sum(axis=1))


# ---------------------------------------------------------------- parameters


def _dense(rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))


def init_lstm(rng, n_in: int, hidden: int) -> dict[str, np.ndarray]:
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0  # forget gate
    return {"lstm.wx": _dense(rng, n_in, 4 * hidden), "lstm.wh": _dense(rng, hidden, 4 * hidden),
            "lstm.b": bias}


def init_head(rng, hidden: int, quantiles: Sequence[float]) -> dict[str, np.ndarray]:
    b2 = np.full(len(quantiles), -1.5)  # offsets start near softplus(-1.5) ~ 0.2
    b2[list(quantiles).index(0.5)] = -0.7  # median starts near 0.4 of the top rung
    return {"head.w1": _dense(rng, hidden, hidden), "head.b1": np.zeros(hidden),
            "head.w2": _dense(rng, hidden, len(quantiles)) * 0.1, "head.b2": b2}


def init_mtan(cfg: ModelConfig, rng) -> dict[str, np.ndarray]:
    H, dk, J, D = cfg.heads, cfg.embed_dim, cfg.latent_dim, cfg.features
    p = {
        "time.lin_w": rng.normal(0.0, 0.3, size=H),
        "time.lin_b": np.zeros(H),
        "time.per_w": rng.uniform(0.1, 1.5, size=(H, dk - 1)),
        "time.per_b": rng.uniform(0.0, 2 * math.pi, size=(H, dk - 1)),
        "attn.w": _dense(rng, dk, cfg.attn_dim) * 2.0,
        "attn.v": _dense(rng, dk, cfg.attn_dim) * 2.0,
        "interp.P": rng.normal(0.0, 1.0 / math.sqrt(H * D), size=(H, D, J)),
        "glu.W": _dense(rng, J, J),
        "glu.b": np.zeros(J),
        "ln.gain": np.ones(J),
        "ln.bias": np.zeros(J),
    }
    p.update(init_lstm(rng, J, cfg.lstm_hidden))
    p.update(init_head(rng, cfg.lstm_hidden, cfg.quantiles))
    return p


# ------------------------------------------------------------- building blocks


def time_embed(t: Tensor | np.ndarray, params: dict, head: int | None = None) -> Tensor:
    """Learned time embedding: one linear dimension plus ``d_k - 1`` sinusoids.

    ``t`` of shape (..., n) maps to (..., H, n, d_k), or (..., n, d_k) when a
    single ``head`` is selected.
    """
    t = ad.as_tensor(t)
    lin_w, lin_b = params["time.lin_w"], params["time.lin_b"]
    per_w, per_b = params["time.per_w"], params["time.per_b"]
    H, dk1 = per_w.shape
    if head is not None:
        lin_w, lin_b = lin_w[head:head + 1], lin_b[head:head + 1]
        per_w, per_b = per_w[head:head + 1], per_b[head:head + 1]
        H = 1
    tt = ad.reshape(t, t.shape[:-1] + (1, t.shape[-1], 1))  # (..., 1, n, 1)
    lin = tt * ad.reshape(lin_w, (H, 1, 1)) + ad.reshape(lin_b, (H, 1, 1))
    per = ad.sin(tt * ad.reshape(per_w, (H, 1, dk1)) + ad.reshape(per_b, (H, 1, dk1)))
    out = ad.concat([lin, per], axis=-1)
    if head is not None:
        out = ad.reshape(out, out.shape[:-3] + out.shape[-2:])
    return out


def attention_weights(u: np.ndarray, u_hat: np.ndarray, params: dict, embed_dim: int) -> Tensor:
    """Softmax interpolation weights, shape (B, H, k_ref, k_obs)."""
    keys = time_embed(u, params)  # (B, H, k, dk)
    queries = time_embed(u_hat[None, :], params)  # (1, H, k, dk)
    qp = queries @ params["attn.w"]  # (1, H, k, r)
    kp = keys @ params["attn.v"]  # (B, H, k, r)
    scores = (qp @ ad.transpose(kp, (0, 1, 3, 2))) * (1.0 / math.sqrt(embed_dim))
    return ad.softmax(scores, axis=-1)


def mtan_latent(batch: Batch, params: dict, cfg: ModelConfig) -> Tensor:
    """Latent rows E of shape (B, k, J); row n sits at reference offset (n+1)*eta."""
    kappa = attention_weights(batch.u, batch.u_hat, params, cfg.embed_dim)
    B, k = batch.u.shape
    s_hat = kappa @ ad.Tensor(batch.phi[:, None, :, :])  # (B, H, k, D)
    s_hat = ad.reshape(ad.transpose(s_hat, (0, 2, 1, 3)), (B, k, cfg.heads * cfg.features))
    P = ad.reshape(params["interp.P"], (cfg.heads * cfg.features, cfg.latent_dim))
    return s_hat @ P


def glu_skip_norm(E: Tensor, params: dict, eps: float = 1e-5) -> Tensor:
    gated = E * ad.sigmoid(E @ params["glu.W"] + params["glu.b"]) + E
    mu = ad.mean(gated, axis=-1, keepdims=True)
    centered = gated - mu
    var = ad.mean(ad.square(centered), axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * params["ln.gain"] + params["ln.bias"]


def lstm_last(seq: Tensor, params: dict, hidden: int) -> Tensor:
    """Run an LSTM over ``seq`` (B, T, n_in) from index 0 and return the last hidden state."""
    B, T, _ = seq.shape
    xw = seq @ params["lstm.wx"] + params["lstm.b"]  # (B, T, 4h)
    h = ad.Tensor(np.zeros((B, hidden)))
    c = ad.Tensor(np.zeros((B, hidden)))
    for t in range(T):
        z = xw[:, t, :] + h @ params["lstm.wh"]
        i = ad.sigmoid(z[:, :hidden])
        f = ad.sigmoid(z[:, hidden:2 * hidden])
        g = ad.tanh(z[:, 2 * hidden:3 * hidden])
        o = ad.sigmoid(z[:, 3 * hidden:])
        c = f * c + i * g
        h = o * ad.tanh(c)
    return h


def quantile_head(h: Tensor, params: dict, quantiles: Sequence[float]) -> Tensor:
    """MLP giving (B, M) quantiles that are non-decreasing in level by construction."""
    raw = ad.relu(h @ params["head.w1"] + params["head.b1"]) @ params["head.w2"] + params["head.b2"]
    B = raw.shape[0]
    med = list(quantiles).index(0.5)
    cols: dict[int, Tensor] = {med: ad.softplus(raw[:, med])}
    for j in range(med - 1, -1, -1):
        cols[j] = cols[j + 1] - ad.softplus(raw[:, j])
    for j in range(med + 1, len(quantiles)):
        cols[j] = cols[j - 1] + ad.softplus(raw[:, j])
    return ad.concat([ad.reshape(cols[j], (B, 1)) for j in range(len(quantiles))], axis=1)


# ---------------------------------------------------------------------- models


class QuantileModel:
    """Shared plumbing for learned quantile throughput predictors."""

    kind = "abstract"

    def __init__(self, cfg: ModelConfig, norm: Normalization, arrays: dict[str, np.ndarray]):
        self.config = cfg
        self.norm = norm
        self.params = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}

    @property
    def quantile_levels(self) -> tuple[float, ...]:
        return self.config.quantiles

    def parameters(self) -> list[Tensor]:
        return [self.params[name] for name in sorted(self.params)]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            self.params[name].data = np.array(arr, dtype=np.float64)

    def forward(self, batch: Batch) -> tuple[Tensor, Tensor | None]:
        """Normalized quantiles (B, M) and the latent rows used by the smoothness loss."""
        raise NotImplementedError

    def predict_batch(self, windows: Sequence[ObservationWindow]) -> np.ndarray:
        """Quantiles in Mbps, shape (n, M), floored at ``OUTPUT_FLOOR``."""
        with ad.no_grad():
            out, _ = self.forward(make_batch(windows, self.norm))
        return np.maximum(out.data * self.norm.throughput_scale, OUTPUT_FLOOR)

    def predict(self, window: ObservationWindow) -> QuantilePrediction:
        values = self.predict_batch([window])[0]
        return QuantilePrediction(self.quantile_levels, tuple(float(v) for v in values))


class MtanTP(QuantileModel):
    kind = "mtan-tp"

    @classmethod
    def initialize(cls, cfg: ModelConfig, norm: Normalization, seed: int) -> "MtanTP":
        return cls(cfg, norm, init_mtan(cfg, np.random.default_rng(seed)))

    def encode(self, batch: Batch) -> Tensor:
        return mtan_latent(batch, self.params, self.config)

    def forward(self, batch: Batch) -> tuple[Tensor, Tensor]:
        E = self.encode(batch)
        Y = glu_skip_norm(E, self.params)
        # rows run from the newest reference point to the oldest; feed oldest first
        k = batch.u.shape[1]
        seq = Y[:, ::-1, :] if k > 1 else Y
        h = lstm_last(seq, self.params, self.config.lstm_hidden)
        return quantile_head(h, self.params, self.config.quantiles), E


def mtan_encode(window: ObservationWindow, model: MtanTP) -> np.ndarray:
    """Latent matrix E (k x J) for one window."""
    with ad.no_grad():
        return model.encode(make_batch([window], model.norm)).data[0]
