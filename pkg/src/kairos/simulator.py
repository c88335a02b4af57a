"""Trace-driven virtual player.

The player requests chunks back to back. A download of ``size`` megabits
started at wall time ``t`` takes ``rtt`` plus the time the trace needs to
carry ``size`` megabits from ``t``. Rebuffering is whatever part of the
download outlasts the buffer. If the finished chunk pushes the buffer past
``buffer_max`` the player idles until it is back at ``buffer_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .config import RunConfig
from .qoe import QoEBreakdown, qoe_from_series
from .trace_io import NetworkTrace, VideoManifest

LOG_MAGIC = "KAIROS-LOG/1"
LOG_FIELDS = ("index", "level", "bitrate", "size", "start", "end", "duration", "throughput",
              "rebuffer", "buffer", "sleep", "estimate")


class SessionError(RuntimeError):
    """A component failed mid-session; ``__cause__`` holds the original error."""


@dataclass(frozen=True)
class ChunkRecord:
    index: int
    level: int
    bitrate: float  # Mbps
    size: float  # megabits
    start: float  # wall time the request went out
    end: float  # wall time the last bit arrived
    duration: float  # end - start, includes rtt
    throughput: float  # size / (duration - rtt), Mbps
    rebuffer: float  # s
    buffer: float  # s, after the chunk is added (and after any idle)
    sleep: float  # idle time after the download, s
    estimate: float = math.nan  # throughput estimate the controller acted on
    quantiles: tuple[float, ...] = ()  # predictor outputs, if any


@dataclass(frozen=True)
class PlayerState:
    buffer: float = 0.0
    last_level: int | None = None
    chunk: int = 0
    wall: float = 0.0
    history: tuple[ChunkRecord, ...] = field(default=())


@dataclass(frozen=True)
class Decision:
    level: int
    estimate: float = math.nan
    quantiles: tuple[float, ...] = ()


class Policy(Protocol):
    name: str

    def reset(self, trace: NetworkTrace, manifest: VideoManifest) -> None: ...

    def decide(self, state: PlayerState, manifest: VideoManifest) -> Decision: ...


@dataclass(frozen=True)
class SessionResult:
    trace_id: str
    controller: str
    records: tuple[ChunkRecord, ...]
    qoe: QoEBreakdown
    quantile_levels: tuple[float, ...] = ()

    @property
    def bitrates(self) -> list[float]:
        return [r.bitrate for r in self.records]

    @property
    def levels(self) -> list[int]:
        return [r.level for r in self.records]

    def recompute_qoe(self, rebuf_penalty: float, smooth_penalty: float) -> QoEBreakdown:
        return session_qoe(self.records, rebuf_penalty, smooth_penalty)


def session_qoe(records: Sequence[ChunkRecord], rebuf_penalty: float, smooth_penalty: float) -> QoEBreakdown:
    return qoe_from_series([r.bitrate for r in records], [r.rebuffer for r in records],
                           rebuf_penalty, smooth_penalty)


def download_time(trace: NetworkTrace, start: float, size: float, rtt: float = 0.0) -> float:
    if size <= 0:
        raise ValueError("chunk size must be positive")
    return rtt + float(trace.transfer_time(start, size))


def advance(trace: NetworkTrace, wall, buffer, size, chunk_duration: float,
            buffer_max: float, rtt: float):
    """One chunk of player dynamics, vectorised over any broadcastable inputs.

    Returns ``(drain, duration, rebuffer, buffer_after, sleep, wall_after)``.
    """
    drain = trace.transfer_time(wall, size)
    duration = rtt + drain
    rebuffer = np.maximum(0.0, duration - buffer)
    filled = np.maximum(0.0, buffer - duration) + chunk_duration
    sleep = np.maximum(0.0, filled - buffer_max)
    buffer_after = np.minimum(filled, buffer_max)
    wall_after = wall + duration + sleep
    return drain, duration, rebuffer, buffer_after, sleep, wall_after


def step(state: PlayerState, level: int, trace: NetworkTrace, manifest: VideoManifest,
         config: RunConfig, decision: Decision | None = None) -> tuple[PlayerState, ChunkRecord]:
    if state.chunk >= manifest.num_chunks:
        raise ValueError("no chunks left to download")
    if not 0 <= level < manifest.levels:
        raise ValueError(f"bitrate level {level} outside ladder")
    size = manifest.size(state.chunk, level)
    drain, duration, rebuffer, buf, sleep, wall = (
        float(x) for x in advance(trace, state.wall, state.buffer, size,
                                  manifest.chunk_duration, config.buffer_max, config.rtt))
    record = ChunkRecord(
        index=state.chunk,
        level=level,
        bitrate=manifest.ladder[level],
        size=size,
        start=state.wall,
        end=state.wall + duration,
        duration=duration,
        throughput=size / drain,
        rebuffer=rebuffer,
        buffer=buf,
        sleep=sleep,
        estimate=decision.estimate if decision else math.nan,
        quantiles=decision.quantiles if decision else (),
    )
    new_state = PlayerState(buffer=buf, last_level=level, chunk=state.chunk + 1, wall=wall,
                            history=state.history + (record,))
    return new_state, record


def run_session(trace: NetworkTrace, manifest: VideoManifest, policy: Policy,
                config: RunConfig, seed: int = 0) -> SessionResult:
    """Stream the whole video over ``trace`` under ``policy``.

    Sessions are fully deterministic; ``seed`` is accepted for interface
    symmetry with stochastic policies and is otherwise unused.
    """
    del seed
    policy.reset(trace, manifest)
    state = PlayerState()
    for i in range(manifest.num_chunks):
        try:
            decision = policy.decide(state, manifest)
        except Exception as exc:
            raise SessionError(f"{policy.name} on {trace.id}, chunk {i}: {exc}") from exc
        state, _ = step(state, decision.level, trace, manifest, config, decision)
    levels = getattr(policy, "quantile_levels", ())
    return SessionResult(trace.id, policy.name, state.history,
                         session_qoe(state.history, config.rebuf_penalty, config.smooth_penalty),
                         tuple(levels))


def replay_plan(trace: NetworkTrace, manifest: VideoManifest, levels: Sequence[int],
                config: RunConfig, name: str = "plan") -> SessionResult:
    state = PlayerState()
    for level in levels:
        state, _ = step(state, int(level), trace, manifest, config)
    return SessionResult(trace.id, name, state.history,
                         session_qoe(state.history, config.rebuf_penalty, config.smooth_penalty))


# ------------------------------------------------------------------ session logs


def format_session_log(result: SessionResult) -> str:
    levels = result.quantile_levels
    header = list(LOG_FIELDS) + [f"q{q!r}" for q in levels]
    lines = [LOG_MAGIC, f"# trace={result.trace_id}", f"# controller={result.controller}",
             "# quantiles=" + ",".join(repr(q) for q in levels), "\t".join(header)]
    for r in result.records:
        row = [str(r.index), str(r.level)] + [repr(float(getattr(r, f))) for f in LOG_FIELDS[2:]]
        qs = list(r.quantiles) if r.quantiles else [math.nan] * len(levels)
        row += [repr(float(q)) for q in qs]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def parse_session_log(text: str, rebuf_penalty: float = 4.3, smooth_penalty: float = 1.0) -> SessionResult:
    lines = text.splitlines()
    if not lines or lines[0] != LOG_MAGIC:
        raise ValueError(f"not a {LOG_MAGIC} session log")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].strip().partition("=")
        meta[key] = value
        i += 1
    header = lines[i].split("\t")
    if tuple(header[:len(LOG_FIELDS)]) != LOG_FIELDS:
        raise ValueError("unexpected session log columns")
    levels = tuple(float(q) for q in meta.get("quantiles", "").split(",") if q)
    records = []
    for line in lines[i + 1:]:
        if not line:
            continue
        cells = line.split("\t")
        vals = dict(zip(LOG_FIELDS, cells))
        qs = tuple(float(c) for c in cells[len(LOG_FIELDS):])
        if qs and all(math.isnan(q) for q in qs):
            qs = ()
        records.append(ChunkRecord(
            index=int(vals["index"]), level=int(vals["level"]),
            **{f: float(vals[f]) for f in LOG_FIELDS[2:]}, quantiles=qs))
    records = tuple(records)
    return SessionResult(meta.get("trace", ""), meta.get("controller", ""), records,
                         session_qoe(records, rebuf_penalty, smooth_penalty), levels)


def write_session_log(result: SessionResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_session_log(result))


def read_session_log(path, rebuf_penalty: float = 4.3, smooth_penalty: float = 1.0) -> SessionResult:
    return parse_session_log(Path(path).read_text(), rebuf_penalty, smooth_penalty)


__all__ = [
    "ChunkRecord", "Decision", "PlayerState", "Policy", "SessionResult", "advance", "download_time",
    "format_session_log", "parse_session_log", "read_session_log", "replay_plan", "run_session",
    "SessionError", "session_qoe", "step", "write_session_log",
]
