"""Training windows sliced from logged streaming sessions.

File format: the first line is ``KAIROS-DS/1``, the second a JSON object
with the window geometry, the trace split and the resolved run config, and
every following line one JSON window ``{"trace", "phi", "u", "u_hat", "truth"}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .policies import build_policy
from .predictor.window import ObservationWindow, window_from_history
from .simulator import SessionResult, run_session
from .trace_io import NetworkTrace, VideoManifest

DATASET_MAGIC = "KAIROS-DS/1"
LOGGING_POLICY = "hm-mpc"


@dataclass
class Dataset:
    windows: list[ObservationWindow]
    trace_ids: list[str]
    train_traces: tuple[str, ...]
    val_traces: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def split(self) -> tuple[list[ObservationWindow], list[ObservationWindow]]:
        train = set(self.train_traces)
        tr = [w for w, t in zip(self.windows, self.trace_ids) if t in train]
        va = [w for w, t in zip(self.windows, self.trace_ids) if t not in train]
        return tr, va

    def by_trace(self) -> dict[str, list[ObservationWindow]]:
        out: dict[str, list[ObservationWindow]] = {}
        for w, t in zip(self.windows, self.trace_ids):
            out.setdefault(t, []).append(w)
        return out


def windows_from_session(session: SessionResult, k: int, eta: float,
                         chunk_duration: float) -> list[ObservationWindow]:
    """Every full window with a known next chunk: ``num_chunks - k`` of them."""
    recs = session.records
    return [window_from_history(recs[i - k + 1:i + 1], k, eta, chunk_duration, truth=recs[i + 1].throughput)
            for i in range(k - 1, len(recs) - 1)]


def split_traces(trace_ids: Sequence[str], val_fraction: float, seed: int):
    ids = sorted(set(trace_ids))
    if len(ids) < 2 or val_fraction <= 0:
        return tuple(ids), ()
    n_val = min(len(ids) - 1, max(1, int(round(val_fraction * len(ids)))))
    perm = np.random.default_rng(seed).permutation(len(ids))
    val = sorted(ids[i] for i in perm[:n_val])
    train = sorted(ids[i] for i in perm[n_val:])
    return tuple(train), tuple(val)


def log_sessions(traces: Sequence[NetworkTrace], manifest: VideoManifest, config: RunConfig,
                 policy: str = LOGGING_POLICY) -> list[SessionResult]:
    return [run_session(t, manifest, build_policy(policy, config), config) for t in traces]


def make_dataset(traces: Sequence[NetworkTrace], manifest: VideoManifest, config: RunConfig) -> Dataset:
    if not traces:
        raise ValueError("no traces to build a dataset from")
    windows: list[ObservationWindow] = []
    ids: list[str] = []
    for session in log_sessions(traces, manifest, config):
        ws = windows_from_session(session, config.k, config.eta, manifest.chunk_duration)
        windows += ws
        ids += [session.trace_id] * len(ws)
    train, val = split_traces([t.id for t in traces], config.val_fraction, config.seed)
    meta = {"k": config.k, "eta": config.eta, "chunk_duration": manifest.chunk_duration,
            "logging_policy": LOGGING_POLICY, "config": config.to_dict(include_execution=False)}
    return Dataset(windows, ids, train, val, meta)


def format_dataset(ds: Dataset) -> str:
    meta = dict(ds.meta, train_traces=list(ds.train_traces), val_traces=list(ds.val_traces))
    lines = [DATASET_MAGIC, json.dumps(meta, sort_keys=True)]
    for w, t in zip(ds.windows, ds.trace_ids):
        lines.append(json.dumps(dict(w.to_dict(), trace=t), sort_keys=True))
    return "\n".join(lines) + "\n"


def parse_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or lines[0] != DATASET_MAGIC:
        raise ValueError(f"not a {DATASET_MAGIC} dataset")
    meta = json.loads(lines[1])
    windows, ids = [], []
    for line in lines[2:]:
        if line:
            d = json.loads(line)
            windows.append(ObservationWindow.from_dict(d))
            ids.append(d["trace"])
    train = tuple(meta.pop("train_traces"))
    val = tuple(meta.pop("val_traces"))
    return Dataset(windows, ids, train, val, meta)


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_dataset(ds))


def load_dataset(path) -> Dataset:
    return parse_dataset(Path(path).read_text())
