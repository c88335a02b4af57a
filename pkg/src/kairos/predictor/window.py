"""Observation windows and quantile predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

FEATURES = ("throughput", "buffer", "rebuffer", "latency")  # Mbps, s, s, s
OUTPUT_FLOOR = 0.01  # Mbps


def reference_points(k: int, eta: float) -> np.ndarray:
    """Regular reference offsets ``n * eta`` (n = 1..k) before the newest sample."""
    if k < 1 or not eta > 0:
        raise ValueError("need k >= 1 and eta > 0")
    return np.arange(1, k + 1, dtype=np.float64) * eta


@dataclass(frozen=True, eq=False)
class ObservationWindow:
    """``k`` chunk observations, newest first.

    ``phi[m]`` holds (throughput, buffer, rebuffer, latency) of the chunk
    completed ``u[m]`` seconds before the newest one, so ``u[0] == 0``.
    ``u_hat`` are the regular reference offsets. ``truth`` is the measured
    throughput of the following chunk, when known.
    """

    phi: np.ndarray
    u: np.ndarray
    u_hat: np.ndarray
    truth: float | None = None

    def __post_init__(self):
        for name in ("phi", "u", "u_hat"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self.validate()

    @property
    def k(self) -> int:
        return self.u.size

    @property
    def eta(self) -> float:
        return float(self.u_hat[0])

    def validate(self) -> None:
        k = self.u.size
        if self.phi.shape != (k, len(FEATURES)) or self.u_hat.shape != (k,) or k < 1:
            raise ValueError(f"inconsistent window shapes {self.phi.shape}, {self.u.shape}, {self.u_hat.shape}")
        if not (np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.u))):
            raise ValueError("window features must be finite")
        if np.any(self.phi < 0) or np.any(self.u < 0):
            raise ValueError("window features must be non-negative")
        if self.u[0] != 0 or np.any(np.diff(self.u) < 0):
            raise ValueError("relative times must start at 0 and be non-decreasing")
        if not np.array_equal(self.u_hat, reference_points(k, self.u_hat[0])):
            raise ValueError("reference offsets must be exactly n * eta")
        if self.truth is not None and not (math.isfinite(self.truth) and self.truth > 0):
            raise ValueError("truth throughput must be positive")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservationWindow):
            return NotImplemented
        return (np.array_equal(self.phi, other.phi) and np.array_equal(self.u, other.u)
                and np.array_equal(self.u_hat, other.u_hat) and self.truth == other.truth)

    def to_dict(self) -> dict:
        return {"phi": self.phi.tolist(), "u": self.u.tolist(), "u_hat": self.u_hat.tolist(),
                "truth": self.truth}

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationWindow":
        return cls(np.array(d["phi"]), np.array(d["u"]), np.array(d["u_hat"]), d.get("truth"))


def window_from_history(records: Sequence, k: int, eta: float, chunk_duration: float,
                        truth: float | None = None, pad: bool = False) -> ObservationWindow:
    """Build a window from the last ``k`` chunk records (oldest first in ``records``).

    With ``pad=True`` a short history is left-padded with copies of the
    earliest record, spaced ``chunk_duration`` further into the past.
    """
    if not records:
        raise ValueError("need at least one completed chunk")
    if len(records) < k and not pad:
        raise ValueError(f"need {k} completed chunks, have {len(records)}")
    recent = list(records[-k:])[::-1]  # newest first
    newest = recent[0].end
    phi = [[r.throughput, r.buffer, r.rebuffer, r.duration] for r in recent]
    u = [newest - r.end for r in recent]
    while len(phi) < k:
        phi.append(list(phi[-1]))
        u.append(u[-1] + chunk_duration)
    return ObservationWindow(np.array(phi), np.array(u), reference_points(k, eta), truth)


@dataclass(frozen=True)
class QuantilePrediction:
    levels: tuple[float, ...]
    values: tuple[float, ...]  # Mbps

    def __post_init__(self):
        if len(self.levels) != len(self.values) or not self.levels:
            raise ValueError("levels and values must align")
        if any(v <= 0 or not math.isfinite(v) for v in self.values):
            raise ValueError("quantile values must be positive and finite")
        if any(b < a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("quantile values must be non-decreasing in level")

    def at(self, level: float) -> float:
        for q, v in zip(self.levels, self.values):
            if abs(q - level) < 1e-12:
                return v
        raise KeyError(f"quantile level {level} not predicted")

    @property
    def median(self) -> float:
        return self.at(0.5)
