"""Session policies: a throughput estimator feeding a bitrate rule.

Every predictive policy requests the lowest rung for the first chunk, when
no throughput has been observed yet.
"""

from __future__ import annotations

import math
from typing import Mapping

from .baselines import ErrorTracker, hm_predict
from .config import RunConfig
from .controller import adjust_prediction, bola_decide, mpc_decide, offline_optimal
from .predictor.model import QuantileModel
from .predictor.window import window_from_history
from .simulator import Decision, PlayerState
from .trace_io import NetworkTrace, VideoManifest


class HarmonicMeanEstimator:
    quantile_levels: tuple = ()

    def __init__(self, window: int):
        self.window = window

    def reset(self) -> None:
        pass

    def estimate(self, state: PlayerState, manifest: VideoManifest):
        recent = [r.throughput for r in state.history[-self.window:]]
        return hm_predict(recent), ()


class RobustHarmonicMeanEstimator(HarmonicMeanEstimator):
    def __init__(self, window: int, horizon: int):
        super().__init__(window)
        self.tracker = ErrorTracker(horizon)

    def reset(self) -> None:
        self.tracker.reset()

    def estimate(self, state: PlayerState, manifest: VideoManifest):
        self.tracker.observe(state.history[-1].throughput)
        base, _ = super().estimate(state, manifest)
        self.tracker.expect(base)
        return self.tracker.discount(base), ()


class QuantileEstimator:
    """Learned quantile forecast reduced to one number.

    ``mode="adjust"`` applies the buffer-aware uncertainty shift,
    ``mode="robust"`` discounts the median by recent relative errors,
    ``mode="median"`` uses the median as is.
    """

    def __init__(self, model: QuantileModel, config: RunConfig, mode: str = "adjust"):
        if mode not in ("adjust", "robust", "median"):
            raise ValueError(f"unknown estimator mode {mode!r}")
        self.model = model
        self.config = config
        self.mode = mode
        self.tracker = ErrorTracker(config.robust_horizon)

    @property
    def quantile_levels(self) -> tuple:
        return self.model.quantile_levels

    def reset(self) -> None:
        self.tracker.reset()

    def estimate(self, state: PlayerState, manifest: VideoManifest):
        mc = self.model.config
        window = window_from_history(state.history, mc.k, mc.eta, manifest.chunk_duration, pad=True)
        pred = self.model.predict(window)
        if self.mode == "adjust":
            c = self.config
            est = adjust_prediction(pred, state.buffer, c.alpha, c.beta, c.buffer_floor, c.gamma_cap)
        elif self.mode == "robust":
            self.tracker.observe(state.history[-1].throughput)
            self.tracker.expect(pred.median)
            est = self.tracker.discount(pred.median)
        else:
            est = pred.median
        return est, pred.values


class MPCPolicy:
    def __init__(self, name: str, estimator, config: RunConfig):
        self.name = name
        self.estimator = estimator
        self.config = config

    @property
    def quantile_levels(self) -> tuple:
        return self.estimator.quantile_levels

    def reset(self, trace: NetworkTrace, manifest: VideoManifest) -> None:
        self.estimator.reset()

    def decide(self, state: PlayerState, manifest: VideoManifest) -> Decision:
        if not state.history:
            return Decision(0)
        est, quantiles = self.estimator.estimate(state, manifest)
        return Decision(mpc_decide(state, est, manifest, self.config), est, tuple(quantiles))


class BolaPolicy:
    name = "bola"
    quantile_levels: tuple = ()

    def __init__(self, config: RunConfig):
        self.config = config

    def reset(self, trace: NetworkTrace, manifest: VideoManifest) -> None:
        pass

    def decide(self, state: PlayerState, manifest: VideoManifest) -> Decision:
        return Decision(bola_decide(state, manifest, self.config))


class OfflineOptimalPolicy:
    """Replays the clairvoyant plan computed for the trace at reset."""

    name = "offline-optimal"
    quantile_levels: tuple = ()

    def __init__(self, config: RunConfig):
        self.config = config
        self.levels: tuple[int, ...] = ()

    def reset(self, trace: NetworkTrace, manifest: VideoManifest) -> None:
        self.levels = offline_optimal(trace, manifest, self.config).levels

    def decide(self, state: PlayerState, manifest: VideoManifest) -> Decision:
        return Decision(self.levels[state.chunk], math.nan)


# model slot each learned policy needs
MODEL_SLOTS = {"kairos": "kairos", "kairos-na": "kairos", "kairos-ni": "ni", "kairos-ns": "ns"}
POLICY_NAMES = ("kairos", "kairos-na", "kairos-ni", "kairos-ns", "robust-hm-mpc", "hm-mpc", "bola",
                "offline-optimal")


def build_policy(name: str, config: RunConfig, models: Mapping[str, QuantileModel] | None = None):
    models = models or {}
    if name in MODEL_SLOTS:
        slot = MODEL_SLOTS[name]
        if slot not in models:
            raise LookupError(f"controller {name!r} needs a trained {slot} checkpoint")
        mode = "robust" if name == "kairos-na" else "adjust"
        return MPCPolicy(name, QuantileEstimator(models[slot], config, mode), config)
    if name == "hm-mpc":
        return MPCPolicy(name, HarmonicMeanEstimator(config.hm_window), config)
    if name == "robust-hm-mpc":
        return MPCPolicy(name, RobustHarmonicMeanEstimator(config.hm_window, config.robust_horizon), config)
    if name == "bola":
        return BolaPolicy(config)
    if name == "offline-optimal":
        return OfflineOptimalPolicy(config)
    raise ValueError(f"unknown controller {name!r}; choose from {', '.join(POLICY_NAMES)}")
