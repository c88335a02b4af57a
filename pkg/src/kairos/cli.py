"""``kairos`` command-line entry point.

Precedence for configuration: built-in defaults < ``--config`` JSON file <
``--seed`` / ``--workers`` < ``--set key=value`` (applied in order).
Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NumericalError
from .config import RunConfig, describe_keys
from .dataset import load_dataset, make_dataset, save_dataset
from .harness import ABLATION_VARIANTS, run_ablations, run_comparison, write_report
from .policies import MODEL_SLOTS, POLICY_NAMES, build_policy
from .predictor.model import Normalization
from .predictor.training import load_model, save_model, train
from .simulator import SessionError, run_session, write_session_log
from .trace_io import (SyntheticTraceSpec, default_manifest, generate_trace, load_manifest, load_trace,
                       load_trace_dir, save_trace)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CHECKPOINT_KEYS = {"kairos": "kairos_checkpoint", "ns": "ns_checkpoint", "ni": "ni_checkpoint"}
VARIANTS = {"kairos": {}, "ns": {"smooth_loss": False}, "ni": {"predictor_kind": "plain-lstm"}}


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_run_manifest(out: Path, command: str, config: RunConfig, inputs: dict, outputs) -> None:
    """Record command, resolved config and content hashes; no timestamps or absolute output paths."""
    files = sorted({Path(p) for p in outputs})
    doc = {
        "command": command,
        "version": __version__,
        "config": config.to_dict(include_execution=False),
        "inputs": inputs,
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    (out / "run_manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _input_digest(path: Path) -> str:
    if path.is_dir():
        h = hashlib.sha256()
        for p in sorted(q for q in path.iterdir() if q.is_file()):
            h.update(p.name.encode() + b"\0" + p.read_bytes())
        return h.hexdigest()
    return _sha256(path)


def _manifest(config: RunConfig):
    return load_manifest(config.manifest) if config.manifest else default_manifest()


def _load_models(config: RunConfig, controllers, models_dir: str | None) -> dict:
    models = {}
    for slot in sorted({MODEL_SLOTS[c] for c in controllers if c in MODEL_SLOTS}):
        path = getattr(config, CHECKPOINT_KEYS[slot])
        if not path and models_dir:
            path = str(Path(models_dir) / f"{slot}.ckpt")
        if not path:
            raise LookupError(f"no checkpoint for {slot!r}: set {CHECKPOINT_KEYS[slot]} or pass --models")
        models[slot] = load_model(path)
    return models


# ------------------------------------------------------------------ commands


def cmd_gen_traces(args, config: RunConfig) -> None:
    spec = SyntheticTraceSpec.load(args.spec) if args.spec else SyntheticTraceSpec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    seeds = np.random.SeedSequence(config.seed).generate_state(args.count, dtype=np.uint32)
    for i in range(args.count):
        tid = f"{args.prefix}{i:03d}"
        trace = generate_trace(spec.__class__(**dict(spec.to_dict(), seed=int(seeds[i]))), tid)
        path = out / f"{tid}.txt"
        save_trace(trace, path)
        written.append(path)
    spec_path = out / "suite.json"
    spec_path.write_text(json.dumps(dict(spec.to_dict(), seed=config.seed, count=args.count,
                                         prefix=args.prefix), sort_keys=True, indent=2) + "\n")
    _write_run_manifest(out, "gen-traces", config, {}, written + [spec_path])
    print(f"wrote {len(written)} traces to {out}")


def cmd_make_dataset(args, config: RunConfig) -> None:
    traces = load_trace_dir(args.traces)
    if not traces:
        raise ValueError(f"no trace files in {args.traces}")
    manifest = _manifest(config)
    ds = make_dataset(traces, manifest, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.jsonl"
    save_dataset(ds, path)
    _write_run_manifest(out, "make-dataset", config, {"traces": _input_digest(Path(args.traces))}, [path])
    print(f"{len(ds.windows)} windows from {len(traces)} traces "
          f"({len(ds.train_traces)} train / {len(ds.val_traces)} validation traces) -> {path}")


def cmd_train(args, config: RunConfig) -> None:
    config = config.replace(**VARIANTS[args.variant])
    ds = load_dataset(args.dataset)
    if ds.meta.get("k") != config.k or ds.meta.get("eta") != config.eta:
        raise ValueError(f"dataset geometry k={ds.meta.get('k')}, eta={ds.meta.get('eta')} "
                         f"does not match config k={config.k}, eta={config.eta}")
    manifest = _manifest(config)
    norm = Normalization.for_setup(manifest.max_bitrate, config.buffer_max, manifest.chunk_duration)
    tr, va = ds.split()
    result = train(tr, va, config, norm)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{args.variant}.ckpt"
    save_model(ckpt, result.model, config, result.log)
    log_path = out / f"{args.variant}_train_log.tsv"
    keys = list(result.log[0])
    lines = ["\t".join(keys)] + ["\t".join(repr(e[k]) for k in keys) for e in result.log]
    log_path.write_text("\n".join(lines) + "\n")
    _write_run_manifest(out, "train", config, {"dataset": _input_digest(Path(args.dataset))}, [ckpt, log_path])
    last = result.log[-1]
    print(f"trained {args.variant} ({config.predictor_kind}) for {config.epochs} epochs; "
          f"final {', '.join(f'{k}={v:.4g}' for k, v in last.items() if k != 'epoch')} -> {ckpt}")


def cmd_simulate(args, config: RunConfig) -> None:
    trace = load_trace(args.trace)
    manifest = _manifest(config)
    models = _load_models(config, [args.controller], args.models)
    session = run_session(trace, manifest, build_policy(args.controller, config, models), config, config.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = out / f"{args.controller}_{trace.id}.log"
    write_session_log(session, log)
    q = session.qoe
    summary = out / "summary.json"
    summary.write_text(json.dumps({"trace": trace.id, "controller": args.controller, "qoe": q.to_dict(),
                                   "total_rebuffer_s": sum(r.rebuffer for r in session.records)},
                                  sort_keys=True, indent=2) + "\n")
    _write_run_manifest(out, "simulate", config, {"trace": _input_digest(Path(args.trace))}, [log, summary])
    print(f"{args.controller} on {trace.id}: QoE={q.average_qoe:.4f} utility={q.utility:.4f} "
          f"rebuffer_penalty={q.rebuffer_penalty:.4f} smoothness_penalty={q.smoothness_penalty:.4f} "
          f"rebuffer_s={sum(r.rebuffer for r in session.records):.4f}")


def _suite(args, config: RunConfig):
    traces = load_trace_dir(args.traces)
    if not traces:
        raise ValueError(f"no trace files in {args.traces}")
    return traces, _manifest(config)


def cmd_compare(args, config: RunConfig) -> None:
    traces, manifest = _suite(args, config)
    controllers = tuple(config.controllers)
    unknown = [c for c in controllers if c not in POLICY_NAMES]
    if unknown:
        raise UsageError(f"unknown controllers {unknown}; choose from {', '.join(POLICY_NAMES)}")
    models = _load_models(config, controllers, args.models)
    report, sessions = run_comparison(traces, manifest, config, models, controllers, workers=args.workers)
    out = Path(args.out)
    written = write_report(report, sessions, out, config)
    _write_run_manifest(out, "compare", config, {"traces": _input_digest(Path(args.traces))}, written)
    print((out / "report.txt").read_text(), end="")


def cmd_ablate(args, config: RunConfig) -> None:
    traces, manifest = _suite(args, config)
    models = _load_models(config, ABLATION_VARIANTS, args.models)
    report, sessions = run_ablations(traces, manifest, config, models, workers=args.workers)
    out = Path(args.out)
    written = write_report(report, sessions, out, config)
    _write_run_manifest(out, "ablate", config, {"traces": _input_digest(Path(args.traces))}, written)
    print((out / "report.txt").read_text(), end="")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of RunConfig keys")
    common.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    common.add_argument("--workers", type=int, help="parallel session workers, 0 = all cores")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    parser = argparse.ArgumentParser(
        prog="kairos", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Trace-driven ABR lab: quantile throughput prediction and uncertainty-aware MPC.",
        epilog="configuration keys (--set KEY=VALUE):\n" + describe_keys())
    parser.add_argument("--version", action="version", version=f"kairos {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traces", parents=[common], help="write synthetic bandwidth traces")
    p.add_argument("--spec", help="JSON SyntheticTraceSpec (default: built-in spec)")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--prefix", default="trace", help="trace id / file name prefix")
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("make-dataset", parents=[common], help="log HM-MPC sessions and slice training windows")
    p.add_argument("--traces", required=True, help="directory of trace files")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", parents=[common], help="train a throughput predictor")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="kairos",
                   help="kairos (full loss), ns (no smoothness loss) or ni (plain LSTM)")
    p.set_defaults(func=cmd_train)

    for name, func, text in (("simulate", cmd_simulate, "stream one trace with one controller"),
                             ("compare", cmd_compare, "run every configured controller on a trace set"),
                             ("ablate", cmd_ablate, "run kairos and its -na/-ni/-ns variants")):
        p = sub.add_parser(name, parents=[common], help=text)
        if name == "simulate":
            p.add_argument("--trace", required=True)
            p.add_argument("--controller", required=True, choices=POLICY_NAMES)
        else:
            p.add_argument("--traces", required=True, help="directory of trace files")
        p.add_argument("--models", help="directory holding kairos.ckpt / ns.ckpt / ni.ckpt")
        p.set_defaults(func=func)
    return parser


def resolve_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.workers is not None:
        if args.workers < 0:
            raise ValueError("--workers must be >= 0")
        config = config.replace(workers=args.workers)
    return config.with_overrides(args.overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"kairos: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "count", 1) < 1:
        print("kairos: --count must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    print("# resolved config")
    print(config.to_json())
    try:
        args.func(args, config)
    except UsageError as exc:
        print(f"kairos: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"kairos: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SessionError as exc:
        code = EXIT_NUMERIC if isinstance(exc.__cause__, NumericalError) else EXIT_DATA
        print(f"kairos: {exc}", file=sys.stderr)
        return code
    except (ValueError, LookupError, OSError) as exc:
        print(f"kairos: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
