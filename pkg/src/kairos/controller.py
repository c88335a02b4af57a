"""Bitrate decision rules: uncertainty-adjusted MPC, BOLA, and a clairvoyant planner."""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .predictor.window import QuantilePrediction
from .simulator import PlayerState, SessionResult, advance, replay_plan
from .trace_io import NetworkTrace, VideoManifest

ESTIMATE_FLOOR = 0.01  # Mbps


def uncertainty_scale(buffer: float, alpha: float, beta: float, floor: float, cap: float) -> float:
    """gamma = alpha + beta / B, with B floored at ``floor`` and gamma clamped to [0, cap]."""
    gamma = alpha + beta / max(buffer, floor)
    return min(max(gamma, 0.0), cap)


def adjust_prediction(pred: QuantilePrediction, buffer: float, alpha: float = 0.2, beta: float = 2.0,
                      floor: float = 0.1, gamma_cap: float = 1.0) -> float:
    """Shift the median toward the 0.1 quantile, more so when the buffer is low."""
    if buffer < 0:
        raise ValueError("buffer must be non-negative")
    try:
        median, low = pred.at(0.5), pred.at(0.1)
    except KeyError as exc:
        raise ValueError(f"prediction lacks a required level: {exc}") from None
    gamma = uncertainty_scale(buffer, alpha, beta, floor, gamma_cap)
    value = median - gamma * (median - low)
    # exact for gamma in [0, 1]; only removes last-ulp rounding below the 0.1 quantile
    lo, hi = min(low, median), max(low, median)
    return max(min(max(value, lo), hi), ESTIMATE_FLOOR)


# --------------------------------------------------------------------------- MPC


@functools.lru_cache(maxsize=None)
def bitrate_sequences(levels: int, horizon: int) -> np.ndarray:
    """All level sequences of the given length in lexicographic order, shape (L^N, N)."""
    seqs = np.array(list(itertools.product(range(levels), repeat=horizon)), dtype=np.int64)
    seqs.setflags(write=False)
    return seqs


def plan_scores(state: PlayerState, estimate: float, manifest: VideoManifest, config: RunConfig):
    """Planned QoE of every lookahead sequence; returns (sequences, scores)."""
    n = min(config.horizon, manifest.num_chunks - state.chunk)
    seqs = bitrate_sequences(manifest.levels, n)
    ladder = np.asarray(manifest.ladder)
    buf = np.full(seqs.shape[0], float(state.buffer))
    total = np.zeros(seqs.shape[0])
    prev = None if state.last_level is None else ladder[state.last_level]
    for j in range(n):
        lv = seqs[:, j]
        r = ladder[lv]
        dl = manifest.sizes(state.chunk + j)[lv] / estimate
        rebuf = np.maximum(0.0, dl - buf)
        buf = np.clip(buf + manifest.chunk_duration - dl, 0.0, config.buffer_max)
        switch = 0.0 if prev is None else np.abs(r - prev)
        total = total + (r - config.rebuf_penalty * rebuf - config.smooth_penalty * switch)
        prev = r
    return seqs, total


def mpc_decide(state: PlayerState, estimate: float, manifest: VideoManifest, config: RunConfig) -> int:
    """First level of the best lookahead plan under a constant throughput estimate.

    Ties go to the lexicographically smallest plan, hence to the lower first level.
    """
    if not estimate > 0:
        raise ValueError("throughput estimate must be positive")
    if state.chunk >= manifest.num_chunks:
        raise ValueError("no chunks left")
    seqs, total = plan_scores(state, estimate, manifest, config)
    return int(seqs[int(np.argmax(total)), 0])


# -------------------------------------------------------------------------- BOLA


def bola_parameters(sizes: np.ndarray, chunk_duration: float, buffer_max: float) -> tuple[float, float]:
    """Control weight V (s) and utility offset gamma for BOLA-basic.

    gamma = 1 keeps the lowest rung optimal at an empty buffer for log
    utilities; V = (B_max - D) / (u_L + gamma) puts the zero of the top
    rung's objective one chunk below the buffer cap.
    """
    top_utility = math.log(sizes[-1] / sizes[0])
    gamma = 1.0
    v = max(buffer_max - chunk_duration, chunk_duration) / (top_utility + gamma)
    return v, gamma


def bola_objective(buffer: float, sizes: np.ndarray, chunk_duration: float, buffer_max: float) -> np.ndarray:
    v, gamma = bola_parameters(sizes, chunk_duration, buffer_max)
    utilities = np.log(sizes / sizes[0])
    return (v * (utilities + gamma) - buffer) / sizes


def bola_decide(state: PlayerState, manifest: VideoManifest, config: RunConfig) -> int:
    sizes = manifest.sizes(state.chunk)
    scores = bola_objective(state.buffer, sizes, manifest.chunk_duration, config.buffer_max)
    return int(np.argmax(scores))


# ------------------------------------------------------------------ clairvoyant


@dataclass(frozen=True)
class OfflinePlan:
    levels: tuple[int, ...]
    total_qoe: float
    session: SessionResult


def offline_optimal(trace: NetworkTrace, manifest: VideoManifest, config: RunConfig) -> OfflinePlan:
    """Dynamic program over (chunk, previous level, buffer bin) with exact downloads.

    Each (previous level, buffer bin) cell keeps up to ``dp_paths`` partial
    plans: the best-scoring ones among distinct wall-time bins. Wall time is
    worth keeping apart because the same buffer reached at different times
    faces different bandwidth. Every transition is simulated exactly from
    the stored buffer and wall time; binning only limits which plans survive.
    """
    L = manifest.levels
    ladder = np.asarray(manifest.ladder)
    step_s = config.dp_buffer_step
    width = config.dp_paths
    wall = np.zeros(1)
    buf = np.zeros(1)
    prev = np.full(1, -1)
    score = np.zeros(1)
    parents: list[np.ndarray] = []
    chosen: list[np.ndarray] = []
    for i in range(manifest.num_chunks):
        S = wall.size
        lv = np.tile(np.arange(L), S)
        src = np.repeat(np.arange(S), L)
        sizes = manifest.sizes(i)[lv]
        _, _, rebuf, nbuf, _, nwall = advance(trace, wall[src], buf[src], sizes,
                                              manifest.chunk_duration, config.buffer_max, config.rtt)
        if i == 0:
            gain = np.zeros(lv.size)  # startup chunk is not scored
        else:
            r = ladder[lv]
            gain = r - config.rebuf_penalty * rebuf - config.smooth_penalty * np.abs(r - ladder[prev[src]])
        cand = score[src] + gain
        cell = lv * (int(math.ceil(config.buffer_max / step_s)) + 1) + np.rint(nbuf / step_s).astype(np.int64)
        wb = np.rint(nwall / step_s).astype(np.int64)
        # best plan per (cell, wall bin), ties to the earlier wall time
        order = np.lexsort((nwall, -cand, wb, cell))
        first = np.ones(order.size, dtype=bool)
        first[1:] = (cell[order[1:]] != cell[order[:-1]]) | (wb[order[1:]] != wb[order[:-1]])
        keep = order[first]
        # then the ``width`` best of those per cell
        keep = keep[np.lexsort((nwall[keep], -cand[keep], cell[keep]))]
        c = cell[keep]
        starts = np.flatnonzero(np.r_[True, c[1:] != c[:-1]])
        rank = np.arange(c.size) - np.repeat(starts, np.diff(np.r_[starts, c.size]))
        keep = keep[rank < width]
        parents.append(src[keep])
        chosen.append(lv[keep])
        wall, buf, prev, score = nwall[keep], nbuf[keep], lv[keep], cand[keep]
    best = int(np.argmax(score))
    levels = []
    for i in range(manifest.num_chunks - 1, -1, -1):
        levels.append(int(chosen[i][best]))
        best = int(parents[i][best])
    levels.reverse()
    session = replay_plan(trace, manifest, levels, config, name="offline-optimal")
    return OfflinePlan(tuple(levels), session.qoe.total_qoe, session)
