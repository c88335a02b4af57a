"""Run configuration: every tunable constant in one serializable record."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

# (unit, description) per key, used by ``--help`` and the README table.
DOCS = {
    "k": ("count", "observation window length"),
    "eta": ("s", "spacing of regular reference points"),
    "heads": ("count", "attention heads H"),
    "latent_dim": ("count", "encoder latent width J"),
    "embed_dim": ("count", "time-embedding width d_k"),
    "attn_dim": ("count", "width of the query/key projections w, v (1 = column vectors)"),
    "lstm_hidden": ("count", "LSTM hidden size"),
    "quantiles": ("levels", "predicted quantile levels, comma separated"),
    "theta": ("ratio", "smoothness threshold on median vs window mean"),
    "smooth_loss": ("flag", "train with the smoothness regularizer"),
    "sf_literal": ("flag", "use the as-printed e_n - 2e_{n-1} - e_{n-2} latent penalty"),
    "quantile_loss": ("name", "pinball (level q learns the q-quantile) or as-printed (weights swapped)"),
    "predictor_kind": ("name", "mtan-tp or plain-lstm"),
    "epochs": ("count", "training epochs"),
    "lr": ("1", "Adam learning rate"),
    "batch_size": ("count", "training minibatch size"),
    "clip_norm": ("1", "global gradient-norm clip"),
    "val_fraction": ("fraction", "share of traces held out for validation"),
    "seed": ("int", "master RNG seed"),
    "horizon": ("chunks", "MPC lookahead N"),
    "rebuf_penalty": ("1/s", "QoE rebuffering weight lambda"),
    "smooth_penalty": ("1", "QoE smoothness weight mu"),
    "alpha": ("1", "base uncertainty scale"),
    "beta": ("s", "buffer-dependent uncertainty scale"),
    "buffer_floor": ("s", "buffer floor in the uncertainty scale"),
    "gamma_cap": ("1", "upper clamp on the uncertainty scale"),
    "buffer_max": ("s", "client buffer capacity B_max"),
    "robust_horizon": ("chunks", "error history for the RobustMPC discount"),
    "hm_window": ("chunks", "samples in the harmonic-mean estimate"),
    "rtt": ("s", "per-request round-trip time"),
    "dp_buffer_step": ("s", "buffer (and wall-time) discretization of the offline planner"),
    "dp_paths": ("count", "partial plans the offline planner keeps per (level, buffer bin) cell"),
    "controllers": ("names", "controllers run by compare, comma separated"),
    "manifest": ("path", "video manifest file (empty = built-in 6-rung ladder)"),
    "kairos_checkpoint": ("path", "mTAN-TP checkpoint (full loss)"),
    "ns_checkpoint": ("path", "mTAN-TP checkpoint trained without the smoothness loss"),
    "ni_checkpoint": ("path", "plain-LSTM checkpoint"),
    "workers": ("count", "parallel session workers (0 = all cores)"),
}

# keys that influence how fast a run goes but never what it produces
EXECUTION_ONLY = {"workers"}


@dataclass
class RunConfig:
    k: int = 8
    eta: float = 4.0
    heads: int = 4
    latent_dim: int = 32
    embed_dim: int = 16
    attn_dim: int = 1
    lstm_hidden: int = 32
    quantiles: tuple = (0.1, 0.5, 0.9)
    theta: float = 1.2
    smooth_loss: bool = True
    sf_literal: bool = False
    quantile_loss: str = "pinball"
    predictor_kind: str = "mtan-tp"
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64
    clip_norm: float = 5.0
    val_fraction: float = 0.1
    seed: int = 0
    horizon: int = 5
    rebuf_penalty: float = 4.3
    smooth_penalty: float = 1.0
    alpha: float = 0.2
    beta: float = 2.0
    buffer_floor: float = 0.1
    gamma_cap: float = 1.0
    buffer_max: float = 60.0
    robust_horizon: int = 5
    hm_window: int = 5
    rtt: float = 0.08
    dp_buffer_step: float = 0.1
    dp_paths: int = 4
    controllers: tuple = ("kairos", "robust-hm-mpc", "hm-mpc", "bola", "offline-optimal")
    manifest: str = ""
    kairos_checkpoint: str = ""
    ns_checkpoint: str = ""
    ni_checkpoint: str = ""
    workers: int = 0

    def __post_init__(self):
        self.quantiles = tuple(float(q) for q in self.quantiles)
        self.controllers = tuple(self.controllers)
        self.validate()

    def validate(self) -> None:
        qs = self.quantiles
        if any(b <= a for a, b in zip(qs, qs[1:])) or not all(0 < q < 1 for q in qs):
            raise ValueError("quantiles must be strictly increasing inside (0, 1)")
        if 0.5 not in qs or 0.1 not in qs:
            raise ValueError("quantiles must include 0.1 and 0.5")
        if self.k < 1 or self.eta <= 0:
            raise ValueError("need k >= 1 and eta > 0")
        if self.dp_buffer_step <= 0 or self.dp_paths < 1:
            raise ValueError("need dp_buffer_step > 0 and dp_paths >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.rebuf_penalty < 0 or self.smooth_penalty < 0:
            raise ValueError("QoE penalties must be non-negative")
        if self.buffer_floor <= 0 or self.buffer_max <= 0:
            raise ValueError("buffer_floor and buffer_max must be positive")
        if self.quantile_loss not in ("pinball", "as-printed"):
            raise ValueError(f"unknown quantile_loss {self.quantile_loss!r}")
        if self.predictor_kind not in ("mtan-tp", "plain-lstm"):
            raise ValueError(f"unknown predictor_kind {self.predictor_kind!r}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self, include_execution: bool = True) -> dict:
        d = dataclasses.asdict(self)
        d["quantiles"] = list(self.quantiles)
        d["controllers"] = list(self.controllers)
        if not include_execution:
            for key in EXECUTION_ONLY:
                d.pop(key)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(include_execution=False), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, pairs) -> "RunConfig":
        """Apply ``key=value`` strings, coercing to each field's type."""
        changes = {}
        for pair in pairs:
            key, sep, raw = pair.partition("=")
            key = key.strip()
            if not sep or key not in self.__dataclass_fields__:
                raise ValueError(f"bad override {pair!r}; expected key=value with a known key")
            changes[key] = coerce(key, raw.strip(), getattr(self, key))
        return self.replace(**changes)


def coerce(key: str, raw: str, current):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return tuple(float(s) for s in items) if key == "quantiles" else tuple(items)
    return raw


def describe_keys() -> str:
    defaults = RunConfig()
    lines = []
    for f in dataclasses.fields(RunConfig):
        unit, text = DOCS[f.name]
        value = getattr(defaults, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"  {f.name:<18} default={value!s:<12} [{unit}] {text}")
    return "\n".join(lines)
