import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from hiercrop.model import VARIANTS

FAST = "[train]\nmax_epochs = 2\nbatch_size = 32\n"


def run(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "hiercrop.cli", *map(str, args)], capture_output=True, text=True,
                          cwd=cwd)


def digests(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(Path(path).iterdir())
            if p.name != "run_manifest.json"}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    r = run("synth", "--preset", "tiny", "--seed", 0, "--out-dir", root / "data")
    assert r.returncode == 0, r.stderr
    (root / "fast.cfg").write_text(FAST)
    return root


def test_synth_reproducible(work, tmp_path):
    assert run("synth", "--preset", "tiny", "--seed", 0, "--out-dir", tmp_path).returncode == 0
    assert digests(tmp_path) == digests(work / "data")
    files = set(digests(tmp_path))
    assert {"crops.csv", "series.csv", "legend.csv", "truth.json", "scenario.cfg"} <= files


def test_manifest_contents(work):
    m = json.loads((work / "data" / "run_manifest.json").read_text())
    assert m["command"][:2] == ["hiercrop", "synth"] and m["seed"] == 0
    assert set(m) >= {"config_sha256", "inputs", "outputs", "version", "wall_clock_s"}
    assert "crops.csv" in m["outputs"]


def test_train_then_eval(work):
    out = work / "train"
    r = run("train", "--data", work / "data", "--config", work / "fast.cfg", "--variant", "HierE_final",
            "--out-dir", out)
    assert r.returncode == 0, r.stderr
    assert {"checkpoint.hcck", "history.csv", "test_metrics.csv", "test_summary.json"} <= set(digests(out))
    ev = work / "eval"
    r = run("eval", "--data", work / "data", "--config", work / "fast.cfg", "--checkpoint", out / "checkpoint.hcck",
            "--level", "aggregated", "--curve", "--out-dir", ev)
    assert r.returncode == 0, r.stderr
    s = json.loads((ev / "eval_summary.json").read_text())
    assert list(s["levels"]) == ["aggregated"]
    assert set(s["levels"]["aggregated"]) == {"level", "n", "accuracy", "precision", "recall", "f1", "micro_f1"}
    rows = (ev / "early_season.csv").read_text().splitlines()
    assert rows[0] == "cutoff,label,f1" and {r.split(",")[0] for r in rows[1:]} == {str(t) for t in range(10, 25)}
    # the same model evaluated by train and eval gives the same all-level numbers
    m = json.loads((out / "test_summary.json").read_text())
    r = run("eval", "--data", work / "data", "--config", work / "fast.cfg", "--checkpoint", out / "checkpoint.hcck",
            "--out-dir", work / "eval_all")
    assert json.loads((work / "eval_all" / "eval_summary.json").read_text())["levels"] == m["levels"]


def test_unknown_variant_lists_valid(work):
    r = run("train", "--data", work / "data", "--variant", "HierE_best", "--out-dir", work / "bad")
    assert r.returncode == 2
    assert "HierE_best" in r.stderr and all(v in r.stderr for v in VARIANTS)


def test_malformed_csv_exit_code(work, tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    lines = (work / "data" / "crops.csv").read_text().splitlines()
    lines[6] = lines[6].split(",", 1)[0] + ",20x7,33-06-01-00-00,1.0,1.0,1.0"
    (data / "crops.csv").write_text("\n".join(lines) + "\n")
    r = run("aggregate", "--data", data, "--out-dir", tmp_path / "out")
    assert r.returncode == 3
    assert "crops.csv:7:" in r.stderr


def test_usage_errors(work, tmp_path):
    assert run("train", "--data", work / "data", "--cutoff", 9, "--out-dir", tmp_path).returncode == 2
    assert run("train", "--data", work / "data", "--threads", 0, "--out-dir", tmp_path).returncode == 2
    assert run("eval", "--data", work / "data", "--out-dir", tmp_path).returncode == 2
    (tmp_path / "bad.cfg").write_text("[train]\nlearning_rate = 1\n")
    r = run("train", "--data", work / "data", "--config", tmp_path / "bad.cfg", "--out-dir", tmp_path)
    assert r.returncode == 2 and "learning_rate" in r.stderr


def test_aggregate_counts(work):
    out = work / "agg"
    assert run("aggregate", "--data", work / "data", "--threshold", 0.003, "--out-dir", out).returncode == 0
    text = (out / "aggregation.csv").read_text()
    assert text.count("\n") > 1


def test_featurize_round_trip(work):
    out = work / "feat"
    assert run("featurize", "--data", work / "data", "--out-dir", out).returncode == 0
    from hiercrop.ingest import read_features

    ids, seasons, values, missing = read_features(out / "features.csv")
    assert values.shape[1] == 672 and len(ids) == 60 * 5


def test_train_deterministic_with_one_thread(work, tmp_path):
    args = ("train", "--data", work / "data", "--config", work / "fast.cfg", "--threads", 1, "--seed", 7)
    for k in ("a", "b"):
        assert run(*args, "--out-dir", tmp_path / k).returncode == 0
    assert digests(tmp_path / "a") == digests(tmp_path / "b")
