"""Bandwidth traces and video manifests: parsing, validation, synthesis, serialization.

Trace files are plain text, one ``time_s bandwidth_mbps`` pair per line.
``#`` starts a comment. Two header comments are recognised::

    # id=<trace id>
    # span=<seconds>

``span`` is the replay period. When absent it defaults to the last sample
time plus the median gap between samples (1 s for a single-sample trace).
Sessions that outlive the span replay the trace from the start.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_BANDWIDTH = 1e4  # Mbps, exclusive
PACKET_BITS = 1500 * 8


class TraceFormatError(ValueError):
    """Malformed or invalid trace / manifest content."""


class NetworkTrace:
    """Piecewise-constant bandwidth timeline (Mbps) replayed cyclically."""

    __slots__ = ("id", "times", "bandwidth", "span", "_cum", "_total")

    def __init__(self, trace_id: str, times: Sequence[float], bandwidth: Sequence[float],
                 span: float | None = None):
        t = np.asarray(times, dtype=np.float64)
        bw = np.asarray(bandwidth, dtype=np.float64)
        if t.ndim != 1 or t.shape != bw.shape or t.size == 0:
            raise TraceFormatError("trace needs matching, non-empty time and bandwidth columns")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(bw))):
            raise TraceFormatError("trace values must be finite")
        if np.any(np.diff(t) <= 0):
            raise TraceFormatError("trace times must be strictly increasing")
        if np.any(bw <= 0) or np.any(bw >= MAX_BANDWIDTH):
            raise TraceFormatError(f"bandwidth must lie in (0, {MAX_BANDWIDTH:g}) Mbps")
        t = t - t[0]
        if span is None:
            span = default_span(t)
        span = float(span)
        if not math.isfinite(span) or span <= t[-1]:
            raise TraceFormatError(f"span {span} must exceed the last sample time {t[-1]}")
        t.setflags(write=False)
        bw.setflags(write=False)
        self.id = str(trace_id)
        self.times = t
        self.bandwidth = bw
        self.span = span
        seg = np.diff(np.append(t, span))
        self._cum = np.concatenate([[0.0], np.cumsum(bw * seg)])  # megabits delivered by times[i]
        self._total = float(self._cum[-1])

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.bandwidth.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkTrace):
            return NotImplemented
        return (self.id == other.id and self.span == other.span
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.bandwidth, other.bandwidth))

    def __repr__(self) -> str:
        return f"NetworkTrace(id={self.id!r}, samples={self.times.size}, span={self.span:g})"

    def __reduce__(self):
        return (NetworkTrace, (self.id, self.times.copy(), self.bandwidth.copy(), self.span))

    def mean_bandwidth(self) -> float:
        return self._total / self.span

    def scaled(self, factor: float) -> "NetworkTrace":
        return NetworkTrace(self.id, self.times, self.bandwidth * factor, self.span)

    def delivered(self, t):
        """Megabits the link can carry over [0, t] (vectorised)."""
        t = np.asarray(t, dtype=np.float64)
        laps = np.floor(t / self.span)
        rem = t - laps * self.span
        idx = np.clip(np.searchsorted(self.times, rem, side="right") - 1, 0, self.times.size - 1)
        return laps * self._total + self._cum[idx] + self.bandwidth[idx] * (rem - self.times[idx])

    def time_at_delivered(self, amount):
        """Inverse of :meth:`delivered`: earliest time by which ``amount`` megabits fit."""
        amount = np.asarray(amount, dtype=np.float64)
        laps = np.floor(amount / self._total)
        rem = amount - laps * self._total
        idx = np.clip(np.searchsorted(self._cum, rem, side="right") - 1, 0, self.times.size - 1)
        return laps * self.span + self.times[idx] + (rem - self._cum[idx]) / self.bandwidth[idx]

    def transfer_time(self, start, megabits):
        """Seconds needed to push ``megabits`` through the link starting at ``start``."""
        start = np.asarray(start, dtype=np.float64)
        end = self.time_at_delivered(self.delivered(start) + megabits)
        return np.maximum(end - start, 0.0)


def default_span(times: np.ndarray) -> float:
    if times.size == 1:
        return float(times[0]) + 1.0
    return float(times[-1] + np.median(np.diff(times)))


def bandwidth_at(trace: NetworkTrace, t: float) -> float:
    """Bandwidth in effect at time ``t``; wraps around the trace span."""
    if t < 0:
        raise ValueError("time must be non-negative")
    rem = t - math.floor(t / trace.span) * trace.span
    idx = int(np.searchsorted(trace.times, rem, side="right")) - 1
    return float(trace.bandwidth[max(idx, 0)])


def parse_trace(text: str, trace_id: str = "trace") -> NetworkTrace:
    span = None
    times: list[float] = []
    bws: list[float] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("span="):
                try:
                    span = float(body[5:])
                except ValueError:
                    raise TraceFormatError(f"line {lineno}: bad span header {body!r}") from None
            elif body.startswith("id="):
                trace_id = body[3:].strip()
            continue
        fields = line.split()
        if len(fields) != 2:
            raise TraceFormatError(f"line {lineno}: expected 'time_s bandwidth_mbps', got {line!r}")
        try:
            t, bw = float(fields[0]), float(fields[1])
        except ValueError:
            raise TraceFormatError(f"line {lineno}: non-numeric field in {line!r}") from None
        if not (math.isfinite(t) and math.isfinite(bw)):
            raise TraceFormatError(f"line {lineno}: non-finite value")
        if times and t <= times[-1]:
            raise TraceFormatError(f"line {lineno}: non-increasing time {t} after {times[-1]}")
        if not 0 < bw < MAX_BANDWIDTH:
            raise TraceFormatError(f"line {lineno}: bandwidth {bw} outside (0, {MAX_BANDWIDTH:g}) Mbps")
        times.append(t)
        bws.append(bw)
    if not times:
        raise TraceFormatError("trace has no samples")
    return NetworkTrace(trace_id, times, bws, span)


def serialize_trace(trace: NetworkTrace) -> str:
    lines = [f"# id={trace.id}", f"# span={trace.span!r}"]
    lines += [f"{t!r} {bw!r}" for t, bw in trace.samples]
    return "\n".join(lines) + "\n"


def load_trace(path) -> NetworkTrace:
    path = Path(path)
    return parse_trace(path.read_text(), trace_id=path.stem)


def save_trace(trace: NetworkTrace, path) -> None:
    Path(path).write_text(serialize_trace(trace))


def load_trace_dir(directory) -> list[NetworkTrace]:
    directory = Path(directory)
    paths = sorted(p for p in directory.iterdir() if p.is_file() and p.suffix in (".txt", ".trace", ".log"))
    return [load_trace(p) for p in paths]


def parse_mahimahi(text: str, trace_id: str = "trace", bin_s: float = 1.0,
                   floor_mbps: float = 0.01) -> NetworkTrace:
    """Convert a Mahimahi packet-delivery trace (one ms timestamp per 1500 B packet)."""
    stamps = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            stamps.append(int(line))
        except ValueError:
            raise TraceFormatError(f"line {lineno}: expected integer millisecond timestamp") from None
    if not stamps:
        raise TraceFormatError("mahimahi trace has no packets")
    bins = np.floor(np.asarray(stamps) / (bin_s * 1000.0)).astype(int)
    counts = np.bincount(bins)
    mbps = np.maximum(counts * PACKET_BITS / bin_s / 1e6, floor_mbps)
    return NetworkTrace(trace_id, np.arange(counts.size) * bin_s, mbps, counts.size * bin_s)


# ------------------------------------------------------------------ synthesis


@dataclass(frozen=True)
class SyntheticTraceSpec:
    """Markov-modulated bandwidth process.

    At the end of every dwell period the chain jumps with probability
    ``transition_prob``: to a uniformly chosen other state, or, when
    ``adjacent_only`` is set, one step up or down the sorted means. Within a dwell the
    bandwidth is the state mean plus Gaussian noise, resampled every
    ``sample_interval`` seconds and clamped to ``min_bandwidth``.
    """

    means: tuple[float, ...] = (0.6, 1.2, 2.0, 3.2, 5.0)
    transition_prob: float = 0.6
    dwell_min: float = 4.0
    dwell_max: float = 30.0
    noise_std: float = 0.25
    duration: float = 320.0
    seed: int = 0
    sample_interval: float = 1.0
    min_bandwidth: float = 0.05
    adjacent_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "means", tuple(float(m) for m in self.means))
        if not self.means or any(not (0 < m < MAX_BANDWIDTH) for m in self.means):
            raise ValueError("state means must lie in (0, 1e4) Mbps")
        if not 0.0 <= self.transition_prob <= 1.0:
            raise ValueError("transition_prob must lie in [0, 1]")
        if not 0 < self.dwell_min <= self.dwell_max:
            raise ValueError("dwell bounds must satisfy 0 < dwell_min <= dwell_max")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.sample_interval <= 0 or self.duration < self.sample_interval:
            raise ValueError("duration must cover at least one sample interval")
        if not 0 < self.min_bandwidth < MAX_BANDWIDTH:
            raise ValueError("min_bandwidth must be positive")

    @property
    def state_count(self) -> int:
        return len(self.means)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["means"] = list(self.means)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticTraceSpec":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known - {"state_count"}
        if extra:
            raise ValueError(f"unknown synthetic-trace keys: {sorted(extra)}")
        if "state_count" in d and len(d.get("means", cls.means)) != d["state_count"]:
            raise ValueError("state_count does not match the number of means")
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def load(cls, path) -> "SyntheticTraceSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_trace(spec: SyntheticTraceSpec, trace_id: str | None = None) -> NetworkTrace:
    rng = np.random.default_rng(spec.seed)
    n_total = int(round(spec.duration / spec.sample_interval))
    state = int(rng.integers(spec.state_count))
    order = np.argsort(spec.means, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    values = np.empty(n_total)
    i = 0
    while i < n_total:
        dwell = rng.uniform(spec.dwell_min, spec.dwell_max)
        n = min(max(1, int(round(dwell / spec.sample_interval))), n_total - i)
        noise = rng.standard_normal(n) * spec.noise_std
        values[i:i + n] = spec.means[state] + noise
        i += n
        if spec.state_count > 1 and rng.random() < spec.transition_prob:
            if spec.adjacent_only:
                state = int(order[min(max(rank[state] + (1 if rng.random() < 0.5 else -1), 0), spec.state_count - 1)])
            else:
                state = (state + int(rng.integers(1, spec.state_count))) % spec.state_count
    values = np.clip(values, spec.min_bandwidth, MAX_BANDWIDTH * 0.999)
    times = np.arange(n_total) * spec.sample_interval
    return NetworkTrace(trace_id or f"synth-{spec.seed}", times, values, n_total * spec.sample_interval)


# ------------------------------------------------------------------ manifests


@dataclass(frozen=True)
class VideoManifest:
    """Bitrate ladder (Mbps), chunk duration (s), chunk count, optional size table (megabits)."""

    ladder: tuple[float, ...]
    chunk_duration: float
    num_chunks: int
    chunk_sizes: tuple[tuple[float, ...], ...] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(float(r) for r in self.ladder))
        if len(self.ladder) < 2:
            raise TraceFormatError("ladder needs at least two rungs")
        if any(b <= a for a, b in zip(self.ladder, self.ladder[1:])) or self.ladder[0] <= 0:
            raise TraceFormatError("ladder must be positive and strictly increasing")
        if not self.chunk_duration > 0:
            raise TraceFormatError("chunk_duration must be positive")
        if int(self.num_chunks) != self.num_chunks or self.num_chunks < 2:
            raise TraceFormatError("num_chunks must be an integer >= 2")
        object.__setattr__(self, "num_chunks", int(self.num_chunks))
        if self.chunk_sizes is not None:
            table = tuple(tuple(float(x) for x in row) for row in self.chunk_sizes)
            if len(table) != self.num_chunks or any(len(r) != len(self.ladder) for r in table):
                raise TraceFormatError("chunk_sizes must be a num_chunks x L table")
            if any(x <= 0 for r in table for x in r):
                raise TraceFormatError("chunk sizes must be positive")
            object.__setattr__(self, "chunk_sizes", table)

    @property
    def levels(self) -> int:
        return len(self.ladder)

    @property
    def max_bitrate(self) -> float:
        return self.ladder[-1]

    def size(self, chunk: int, level: int) -> float:
        if self.chunk_sizes is not None:
            return self.chunk_sizes[chunk][level]
        return self.ladder[level] * self.chunk_duration

    def sizes(self, chunk: int) -> np.ndarray:
        return np.array([self.size(chunk, l) for l in range(self.levels)])


DEFAULT_LADDER = (0.3, 0.75, 1.2, 1.85, 2.85, 4.3)


def default_manifest() -> VideoManifest:
    return VideoManifest(DEFAULT_LADDER, 4.0, 48)


def parse_manifest(text: str) -> VideoManifest:
    """Parse ``key = value`` lines plus an optional ``[chunk_sizes]`` table."""
    values: dict[str, str] = {}
    rows: list[tuple[float, ...]] = []
    in_table = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[chunk_sizes]":
            in_table = True
            continue
        try:
            if in_table:
                rows.append(tuple(float(x) for x in line.split()))
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError
        except ValueError:
            raise TraceFormatError(f"manifest line {lineno}: cannot parse {raw!r}") from None
        values[key.strip()] = value.strip()
    missing = {"ladder", "chunk_duration", "num_chunks"} - set(values)
    if missing:
        raise TraceFormatError(f"manifest missing keys: {sorted(missing)}")
    try:
        ladder = tuple(float(x) for x in values["ladder"].split())
        duration = float(values["chunk_duration"])
        count = int(values["num_chunks"])
    except ValueError as exc:
        raise TraceFormatError(f"manifest value error: {exc}") from None
    return VideoManifest(ladder, duration, count, tuple(rows) if rows else None)


def serialize_manifest(manifest: VideoManifest) -> str:
    lines = [
        "ladder = " + " ".join(repr(r) for r in manifest.ladder),
        f"chunk_duration = {manifest.chunk_duration!r}",
        f"num_chunks = {manifest.num_chunks}",
    ]
    if manifest.chunk_sizes is not None:
        lines.append("[chunk_sizes]")
        lines += [" ".join(repr(x) for x in row) for row in manifest.chunk_sizes]
    return "\n".join(lines) + "\n"


def load_manifest(path) -> VideoManifest:
    return parse_manifest(Path(path).read_text())
