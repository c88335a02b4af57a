import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kairos.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from kairos.config import RunConfig
from kairos.dataset import load_dataset
from kairos.trace_io import NetworkTrace, load_trace_dir, parse_trace, save_trace

SMALL = ["--set", "epochs=2", "--set", "latent_dim=8", "--set", "embed_dim=4", "--set", "lstm_hidden=8"]


def run(*argv):
    return main([str(a) for a in argv])


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def lab(tmp_path_factory):
    """Six short traces, a dataset and all three checkpoints, trained briefly."""
    root = tmp_path_factory.mktemp("lab")
    traces = root / "traces"
    traces.mkdir()
    for i, bw in enumerate((10.0, 10.0, 8.0, 6.0, 10.0, 12.0)):
        save_trace(NetworkTrace(f"c{i}", [0.0], [bw], 10.0), traces / f"c{i}.txt")
    assert run("make-dataset", "--traces", traces, "--out", root / "ds") == EXIT_OK
    for v in ("kairos", "ns", "ni"):
        assert run("train", "--dataset", root / "ds" / "dataset.jsonl", "--variant", v,
                   "--out", root / "models", *SMALL, "--set", "epochs=15") == EXIT_OK
    return root


def test_gen_traces_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("gen-traces", "--count", 1, "--seed", 7, "--out", tmp_path / d) == EXIT_OK
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    run("gen-traces", "--count", 1, "--seed", 8, "--out", tmp_path / "c")
    assert (tmp_path / "a" / "trace000.txt").read_bytes() != (tmp_path / "c" / "trace000.txt").read_bytes()


def test_gen_traces_count_and_parse(tmp_path):
    assert run("gen-traces", "--count", 100, "--out", tmp_path) == EXIT_OK
    files = sorted(tmp_path.glob("trace*.txt"))
    assert len(files) == 100
    for f in files:
        parse_trace(f.read_text())
    assert json.loads((tmp_path / "suite.json").read_text())["count"] == 100


def test_gen_traces_single_state_spec(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"means": [2.0], "noise_std": 0.1, "duration": 200}))
    assert run("gen-traces", "--spec", spec, "--count", 3, "--out", tmp_path / "o") == EXIT_OK
    for tr in load_trace_dir(tmp_path / "o"):
        # 6 sigma of the additive noise
        assert np.all(np.abs(tr.bandwidth - 2.0) <= 0.6)


def test_make_dataset_window_count_and_split(lab):
    ds = load_dataset(lab / "ds" / "dataset.jsonl")
    cfg = RunConfig()
    assert len(ds.windows) == 6 * max(0, 48 - cfg.k)
    assert set(ds.train_traces).isdisjoint(ds.val_traces)
    assert set(ds.train_traces) | set(ds.val_traces) == {f"c{i}" for i in range(6)}
    manifest = json.loads((lab / "ds" / "run_manifest.json").read_text())
    assert set(manifest["outputs"]) == {"dataset.jsonl"} and "traces" in manifest["inputs"]


def test_simulate_kairos_constant_trace_has_no_stalls(lab, tmp_path, capsys):
    rc = run("simulate", "--trace", lab / "traces" / "c0.txt", "--controller", "kairos",
             "--models", lab / "models", "--out", tmp_path)
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("# resolved config")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["qoe"]["rebuffer_penalty"] == 0.0


def test_compare_has_five_rows_per_trace(lab, tmp_path):
    rc = run("compare", "--traces", lab / "traces", "--models", lab / "models", "--out", tmp_path, "--workers", 1)
    assert rc == EXIT_OK
    rows = (tmp_path / "sessions.tsv").read_text().splitlines()[1:]
    per_trace = {}
    for r in rows:
        c, t = r.split("\t")[:2]
        per_trace.setdefault(t, set()).add(c)
    assert len(rows) == 5 * 6
    assert all(s == {"kairos", "robust-hm-mpc", "hm-mpc", "bola", "offline-optimal"} for s in per_trace.values())
    assert json.loads((tmp_path / "summary.json").read_text())["config"]["seed"] == RunConfig().seed


def test_ablate_has_four_variants(lab, tmp_path):
    assert run("ablate", "--traces", lab / "traces", "--models", lab / "models", "--out", tmp_path) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "sessions").iterdir()) == \
        ["kairos", "kairos-na", "kairos-ni", "kairos-ns"]
    variants = [line.split("\t")[0] for line in (tmp_path / "fig_ablation.tsv").read_text().splitlines()[1:]]
    assert variants == ["kairos-na", "kairos-ni", "kairos-ns"]


@pytest.mark.parametrize("command", ["compare", "ablate"])
def test_results_independent_of_workers_and_repeat(lab, tmp_path, command):
    for d, w in (("a", 1), ("b", 1), ("c", 4)):
        assert run(command, "--traces", lab / "traces", "--models", lab / "models",
                   "--out", tmp_path / d, "--workers", w, "--set", "controllers=kairos,bola") == EXIT_OK
    a = tree(tmp_path / "a")
    assert a == tree(tmp_path / "b") == tree(tmp_path / "c")


def test_training_and_dataset_are_reproducible(lab, tmp_path):
    for d, w in (("a", 1), ("b", 4)):
        assert run("make-dataset", "--traces", lab / "traces", "--out", tmp_path / d, "--workers", w) == EXIT_OK
        assert run("train", "--dataset", tmp_path / d / "dataset.jsonl", "--out", tmp_path / d,
                   "--workers", w, *SMALL) == EXIT_OK
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert (tmp_path / "a" / "dataset.jsonl").read_bytes() == (lab / "ds" / "dataset.jsonl").read_bytes()


def test_help_lists_every_config_key():
    out = subprocess.run([sys.executable, "-m", "kairos.cli", "--help"], capture_output=True, text=True,
                         check=True).stdout
    for key, value in RunConfig().to_dict().items():
        assert f"  {key} " in out, key
    assert "default=" in out


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "alpha": 0.3}))
    assert run("gen-traces", "--count", 1, "--config", cfg, "--seed", 9, "--set", "alpha=0.4",
               "--out", tmp_path / "o") == EXIT_OK
    text = capsys.readouterr().out
    resolved = json.loads(text.split("\n", 1)[1].split("\nwrote", 1)[0])
    assert resolved["seed"] == 9 and resolved["alpha"] == 0.4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(lab, tmp_path):
    with pytest.raises(SystemExit) as info:
        run("simulate", "--out", tmp_path)
    assert info.value.code == EXIT_USAGE
    assert run("gen-traces", "--out", tmp_path, "--set", "no_such_key=1") == EXIT_USAGE
    assert run("gen-traces", "--out", tmp_path, "--count", 0) == EXIT_USAGE
    assert run("compare", "--traces", lab / "traces", "--out", tmp_path / "x",
               "--set", "controllers=kairos,warp-drive") == EXIT_USAGE
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run("make-dataset", "--traces", empty, "--out", tmp_path / "d") == EXIT_DATA
    assert run("simulate", "--trace", lab / "traces" / "c0.txt", "--controller", "kairos",
               "--out", tmp_path / "s") == EXIT_DATA
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1\n0 2\n")
    assert run("simulate", "--trace", bad, "--controller", "bola", "--out", tmp_path / "s") == EXIT_DATA
    assert run("train", "--dataset", lab / "ds" / "dataset.jsonl", "--out", tmp_path / "t",
               "--set", "lr=1e200", "--set", "clip_norm=1e300", *SMALL) == EXIT_NUMERIC
