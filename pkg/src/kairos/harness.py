"""Controller comparisons, ablations, and the report files built from them.

Every number in a report is derived from ``SessionResult`` records by
:func:`summarize`, so re-reading the persisted session logs reproduces the
report exactly.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baselines import hm_predict
from .config import RunConfig
from .dataset import log_sessions, windows_from_session
from .policies import MODEL_SLOTS, build_policy
from .predictor.model import QuantileModel
from .qoe import QoEBreakdown
from .simulator import SessionResult, read_session_log, run_session, session_qoe, write_session_log
from .trace_io import NetworkTrace, VideoManifest

ABLATION_VARIANTS = ("kairos", "kairos-na", "kairos-ni", "kairos-ns")
SUBMETRICS = ("utility", "rebuffer_penalty", "smoothness_penalty", "average_qoe")


def qoe_breakdown(session: SessionResult, rebuf_penalty: float = 4.3, smooth_penalty: float = 1.0) -> QoEBreakdown:
    if len(session.records) < 2:
        raise ValueError("QoE needs at least two chunks")
    return session_qoe(session.records, rebuf_penalty, smooth_penalty)


def mape(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Mean absolute percentage error, in percent."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise ValueError("predicted and actual lengths differ")
    if a.size == 0:
        raise ValueError("nothing to compare")
    if np.any(a == 0):
        raise ValueError("actual values must be nonzero")
    return float(100.0 * np.mean(np.abs(p - a) / np.abs(a)))


def cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF points (sorted value, i/n)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("cdf of an empty sample")
    n = v.size
    return [(float(x), (i + 1) / n) for i, x in enumerate(v)]


def improvement(a: float, b: float) -> float:
    """Percentage by which mean ``a`` exceeds mean ``b``: (a - b) / |b| * 100."""
    if b == 0:
        return math.inf if a > 0 else (-math.inf if a < 0 else 0.0)
    return (a - b) / abs(b) * 100.0


# ------------------------------------------------------------------ sessions

_WORKER: dict = {}


def _init_worker(manifest, config, models, traces):
    _WORKER.update(manifest=manifest, config=config, models=models,
                   traces={t.id: t for t in traces})


def _run_one(job: tuple[str, str]) -> SessionResult:
    name, trace_id = job
    w = _WORKER
    policy = build_policy(name, w["config"], w["models"])
    return run_session(w["traces"][trace_id], w["manifest"], policy, w["config"], seed=w["config"].seed)


def resolve_workers(workers: int) -> int:
    return workers if workers > 0 else (os.cpu_count() or 1)


def run_sessions(traces: Sequence[NetworkTrace], manifest: VideoManifest, controllers: Sequence[str],
                 config: RunConfig, models: Mapping[str, QuantileModel] | None = None,
                 workers: int | None = None) -> dict[tuple[str, str], SessionResult]:
    """Run every (controller, trace) pair; keyed by (controller, trace id)."""
    if not traces:
        raise ValueError("no traces to run")
    models = dict(models or {})
    ids = [t.id for t in traces]
    if len(set(ids)) != len(ids):
        raise ValueError("trace ids must be unique")
    for name in controllers:
        slot = MODEL_SLOTS.get(name)
        if slot is not None and slot not in models:
            raise LookupError(f"controller {name!r} needs a trained {slot} checkpoint")
    jobs = [(name, tid) for name in controllers for tid in sorted(ids)]
    n = resolve_workers(config.workers if workers is None else workers)
    if n <= 1 or len(jobs) == 1:
        _init_worker(manifest, config, models, traces)
        try:
            results = [_run_one(j) for j in jobs]
        finally:
            _WORKER.clear()
    else:
        with ProcessPoolExecutor(max_workers=n, initializer=_init_worker,
                                 initargs=(manifest, config, models, list(traces))) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * n))))
    return dict(zip(jobs, results))


# ------------------------------------------------------------------ reports


@dataclass
class ComparisonReport:
    controllers: tuple[str, ...]
    trace_ids: tuple[str, ...]
    rows: list[dict]
    means: dict[str, dict[str, float]]
    cdfs: dict[str, list[tuple[float, float]]]
    improvements: dict[str, dict[str, float]]
    fraction_won: dict[str, dict[str, float]]
    streaming_mape: dict[str, float]
    training_mape: dict[str, float] = field(default_factory=dict)
    ablation: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "controllers": list(self.controllers), "traces": list(self.trace_ids),
            "means": self.means, "improvement_pct": self.improvements,
            "fraction_won": self.fraction_won, "streaming_mape_pct": self.streaming_mape,
            "training_mape_pct": self.training_mape, "ablation_delta": self.ablation,
        }


def _streaming_estimates(session: SessionResult) -> tuple[list[float], list[float]]:
    """Per-chunk (forecast, measured throughput); the median quantile when available."""
    pred, actual = [], []
    med = session.quantile_levels.index(0.5) if 0.5 in session.quantile_levels else None
    for r in session.records:
        if med is not None and r.quantiles:
            pred.append(r.quantiles[med])
        elif not math.isnan(r.estimate):
            pred.append(r.estimate)
        else:
            continue
        actual.append(r.throughput)
    return pred, actual


def summarize(sessions: Mapping[tuple[str, str], SessionResult], config: RunConfig,
              controllers: Sequence[str] | None = None) -> ComparisonReport:
    names = tuple(controllers) if controllers else tuple(sorted({c for c, _ in sessions}))
    ids = tuple(sorted({t for _, t in sessions}))
    rows, per = [], {}
    for name in names:
        vals = []
        for tid in ids:
            s = sessions[(name, tid)]
            q = session_qoe(s.records, config.rebuf_penalty, config.smooth_penalty)
            rows.append({"controller": name, "trace": tid, **{m: getattr(q, m) for m in SUBMETRICS}})
            vals.append([getattr(q, m) for m in SUBMETRICS])
        per[name] = np.array(vals)
    means = {n: {m: float(np.mean(per[n][:, j])) for j, m in enumerate(SUBMETRICS)} for n in names}
    cdfs = {n: cdf(per[n][:, 3]) for n in names}
    improvements, won = {}, {}
    for a in names:
        improvements[a], won[a] = {}, {}
        for b in names:
            if a == b:
                continue
            improvements[a][b] = improvement(means[a]["average_qoe"], means[b]["average_qoe"])
            won[a][b] = float(np.mean(per[a][:, 3] > per[b][:, 3]))
    streaming = {}
    for name in names:
        pred, actual = [], []
        for tid in ids:
            p, a = _streaming_estimates(sessions[(name, tid)])
            pred += p
            actual += a
        if pred:
            streaming[name] = mape(pred, actual)
    return ComparisonReport(names, ids, rows, means, cdfs, improvements, won, streaming)


def training_mape(traces: Sequence[NetworkTrace], manifest: VideoManifest, config: RunConfig,
                  models: Mapping[str, QuantileModel]) -> dict[str, float]:
    """Median MAPE on windows sliced from harmonic-mean MPC logs (the training distribution)."""
    windows = []
    for s in log_sessions(traces, manifest, config):
        windows += windows_from_session(s, config.k, config.eta, manifest.chunk_duration)
    if not windows:
        return {}
    truth = [w.truth for w in windows]
    out = {"hm": mape([hm_predict(w.phi[:config.hm_window, 0]) for w in windows], truth)}
    for slot in sorted(models):
        model = models[slot]
        if model.config.k != config.k or model.config.eta != config.eta:
            continue
        med = model.predict_batch(windows)[:, model.config.quantiles.index(0.5)]
        out[slot] = mape(np.maximum(med, 0.01), truth)
    return out


def ablation_deltas(report: ComparisonReport) -> dict[str, dict[str, float]]:
    """Variant minus full Kairos, per submetric."""
    base = report.means["kairos"]
    return {v: {m: report.means[v][m] - base[m] for m in SUBMETRICS}
            for v in report.controllers if v != "kairos"}


def run_comparison(traces: Sequence[NetworkTrace], manifest: VideoManifest, config: RunConfig,
                   models: Mapping[str, QuantileModel] | None = None, controllers: Sequence[str] | None = None,
                   workers: int | None = None, with_training_mape: bool = True):
    """Returns (report, sessions)."""
    names = tuple(controllers or config.controllers)
    sessions = run_sessions(traces, manifest, names, config, models, workers)
    report = summarize(sessions, config, names)
    if with_training_mape and models:
        report.training_mape = training_mape(traces, manifest, config, models)
    return report, sessions


def run_ablations(traces: Sequence[NetworkTrace], manifest: VideoManifest, config: RunConfig,
                  models: Mapping[str, QuantileModel], workers: int | None = None):
    report, sessions = run_comparison(traces, manifest, config, models, ABLATION_VARIANTS, workers)
    report.ablation = ablation_deltas(report)
    return report, sessions


# ------------------------------------------------------------------ files


def _num(x: float) -> str:
    return repr(float(x))


def _tsv(header: Sequence[str], rows) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(c if isinstance(c, str) else _num(c) for c in row) for row in rows]
    return "\n".join(lines) + "\n"


def format_report(report: ComparisonReport, reference_range: tuple[float, float] | None = (6.42, 29.45)) -> str:
    out = ["QoE by controller (mean over traces, chunks 2..N)",
           f"{'controller':<16}{'QoE':>10}{'utility':>10}{'rebuffer':>10}{'smooth':>10}"]
    for n in report.controllers:
        m = report.means[n]
        out.append(f"{n:<16}{m['average_qoe']:>10.4f}{m['utility']:>10.4f}"
                   f"{m['rebuffer_penalty']:>10.4f}{m['smoothness_penalty']:>10.4f}")
    out.append(f"traces: {len(report.trace_ids)}")
    if "kairos" in report.improvements:
        out += ["", "Kairos mean-QoE improvement and share of sessions won"]
        for b, pct in report.improvements["kairos"].items():
            out.append(f"  vs {b:<16}{pct:>+9.2f}%   won {100 * report.fraction_won['kairos'][b]:.2f}%")
        if reference_range:
            out.append(f"  (published range on real corpora: +{reference_range[0]}% to +{reference_range[1]}%)")
    if report.streaming_mape:
        out += ["", "In-streaming forecast MAPE (%)"]
        out += [f"  {n:<16}{v:>8.2f}" for n, v in report.streaming_mape.items()]
    if report.training_mape:
        out += ["", "Offline median MAPE on harmonic-mean MPC logs (%)"]
        out += [f"  {n:<16}{v:>8.2f}" for n, v in report.training_mape.items()]
    if report.ablation:
        out += ["", "Ablation deltas (variant minus kairos)",
                f"{'variant':<16}{'QoE':>10}{'utility':>10}{'rebuffer':>10}{'smooth':>10}"]
        for v, d in report.ablation.items():
            out.append(f"{v:<16}{d['average_qoe']:>+10.4f}{d['utility']:>+10.4f}"
                       f"{d['rebuffer_penalty']:>+10.4f}{d['smoothness_penalty']:>+10.4f}")
    return "\n".join(out) + "\n"


def session_log_path(out_dir, controller: str, trace_id: str) -> Path:
    return Path(out_dir) / "sessions" / controller / f"{trace_id}.log"


def write_report(report: ComparisonReport, sessions: Mapping[tuple[str, str], SessionResult],
                 out_dir, config: RunConfig) -> list[Path]:
    """Write report.txt, summary.json, fig_*.tsv and per-session logs; returns paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str):
        p = out / name
        p.write_text(text)
        written.append(p)

    put("report.txt", format_report(report))
    summary = report.to_dict()
    summary["config"] = config.to_dict(include_execution=False)
    put("summary.json", json.dumps(summary, sort_keys=True, indent=2) + "\n")
    put("fig_cdf.tsv", _tsv(("controller", "qoe", "fraction"),
                            [(n, v, f) for n in report.controllers for v, f in report.cdfs[n]]))
    put("fig_submetrics.tsv", _tsv(("controller",) + SUBMETRICS,
                                   [(n,) + tuple(report.means[n][m] for m in SUBMETRICS)
                                    for n in report.controllers]))
    mape_rows = [("streaming", n, v) for n, v in report.streaming_mape.items()]
    mape_rows += [("offline", n, v) for n, v in report.training_mape.items()]
    put("fig_mape.tsv", _tsv(("setting", "predictor", "mape_pct"), mape_rows))
    put("sessions.tsv", _tsv(("controller", "trace") + SUBMETRICS,
                             [(r["controller"], r["trace"]) + tuple(r[m] for m in SUBMETRICS)
                              for r in report.rows]))
    ts_rows = []
    for (name, tid), s in sorted(sessions.items()):
        for r in s.records:
            ts_rows.append((tid, name, str(r.index), r.end, r.bitrate, r.buffer, r.throughput,
                            r.rebuffer, r.estimate))
    put("fig_timeseries.tsv", _tsv(("trace", "controller", "chunk", "wall", "bitrate", "buffer",
                                    "throughput", "rebuffer", "estimate"), ts_rows))
    if report.ablation:
        put("fig_ablation.tsv", _tsv(("variant",) + SUBMETRICS,
                                     [(v,) + tuple(d[m] for m in SUBMETRICS)
                                      for v, d in report.ablation.items()]))
    for (name, tid), s in sorted(sessions.items()):
        p = session_log_path(out, name, tid)
        write_session_log(s, p)
        written.append(p)
    return written


def load_sessions(out_dir, config: RunConfig) -> dict[tuple[str, str], SessionResult]:
    """Read back every session log under ``out_dir/sessions``."""
    sessions = {}
    for p in sorted((Path(out_dir) / "sessions").glob("*/*.log")):
        s = read_session_log(p, config.rebuf_penalty, config.smooth_penalty)
        sessions[(s.controller, s.trace_id)] = s
    return sessions


__all__ = [
    "ABLATION_VARIANTS", "ComparisonReport", "ablation_deltas", "cdf", "format_report", "improvement",
    "load_sessions", "mape", "qoe_breakdown", "run_ablations", "run_comparison", "run_sessions",
    "summarize", "training_mape", "write_report",
]
