import json
import subprocess
import sys

import numpy as np
import pytest

from sorisk.cli import run


def _cfg(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_toy_writes_outputs_and_reruns_identically(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[experiment]\nexperiment = toy_model\nmaster_seed = 42\nn_trials = 5000\n")
    assert run(["toy", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("toy:") and "\n" not in line
    out = tmp_path / "a"
    assert {"toy.csv", "toy_trials.csv", "toy.schema.json", "manifest.json"} <= {p.name for p in out.iterdir()}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 42 and manifest["config"]["n_trials"] == 5000
    assert manifest["outputs"]["toy.csv"]
    assert run(["toy", "--config", str(out / "manifest.json"), "--out", str(tmp_path / "b"),
                "--threads", "8"]) == 0
    assert _files(out) == _files(tmp_path / "b")


def test_seed_flag_overrides_config(tmp_path):
    cfg = _cfg(tmp_path, "[experiment]\nexperiment = toy_model\nmaster_seed = 1\nn_trials = 100\n")
    run(["toy", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "a")])
    assert json.loads((tmp_path / "a" / "manifest.json").read_text())["master_seed"] == 2


def test_frontier_schema_and_threads(tmp_path):
    cfg = _cfg(tmp_path, "[experiment]\nexperiment = frontier\nmaster_seed = 3\nn_trials = 4\n"
                         "[parameters]\nn_assets = 6\nt_obs = 15\nr_grid = 0.0, 0.05\n")
    assert run(["frontier", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert run(["frontier", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "8"]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    header = (tmp_path / "a" / "frontier.csv").read_text().splitlines()[0].split(",")
    for col in ("R", "true_frontier", "mean_naive", "mean_realized", "mean_corrected",
                "se_naive", "se_realized", "se_corrected"):
        assert col in header
    schema = json.loads((tmp_path / "a" / "frontier.schema.json").read_text())
    assert {c["name"] for c in schema["columns"]} == set(header)


def test_json_format(tmp_path):
    cfg = _cfg(tmp_path, "[experiment]\nexperiment = wishart_oracle\nmaster_seed = 3\nn_trials = 50\n")
    assert run(["wishart", "--config", cfg, "--out", str(tmp_path), "--format", "json"]) == 0
    rows = json.loads((tmp_path / "wishart.json").read_text())
    assert [r["moment"] for r in rows] == ["inverse", "sandwich"]


def test_wishart_divergence_exit_1(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[experiment]\nexperiment = wishart_oracle\nmaster_seed = 1\n"
                         "[parameters]\nn_assets = 10\nt_obs = 12\n")
    assert run(["wishart", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "diverge" in capsys.readouterr().err


def test_validation_failures_exit_1(tmp_path):
    assert run(["backtest", "--out", str(tmp_path)]) == 1
    assert run(["toy", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    cfg = _cfg(tmp_path, "[experiment]\nexperiment = frontier\nmaster_seed = 1\n")
    assert run(["toy", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert run(["toy", "--threads", "0", "--out", str(tmp_path)]) == 1


def test_runtime_failure_exit_2(tmp_path, monkeypatch):
    import sorisk.cli as cli

    def boom(*a, **k):
        raise np.linalg.LinAlgError("singular")
    monkeypatch.setattr(cli, "run_experiment", boom)
    assert run(["toy", "--out", str(tmp_path)]) == 2


def test_backtest_with_csv(tmp_path, capsys):
    rng = np.random.default_rng(0)
    lines = ["date," + ",".join(f"S{i}" for i in range(6))]
    import datetime as dt
    d0 = dt.date(2020, 1, 1)
    for t in range(120):
        vals = 0.01 * rng.standard_normal(6)
        lines.append((d0 + dt.timedelta(days=t)).isoformat() + "," + ",".join(repr(float(v)) for v in vals))
    data = tmp_path / "r.csv"
    data.write_text("\n".join(lines) + "\n")
    cfg = _cfg(tmp_path, "[experiment]\nexperiment = backtest\nmaster_seed = 1\nn_trials = 2\n"
                         "[parameters]\nt_obs = 30\nn_assets = 4\n")
    assert run(["backtest", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "o")]) == 0
    assert "backtest:" in capsys.readouterr().out
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["inputs"]["data"]["sha256"]
    # the manifest alone reproduces the run
    assert run(["backtest", "--config", str(tmp_path / "o" / "manifest.json"),
                "--out", str(tmp_path / "p")]) == 0
    assert _files(tmp_path / "o") == _files(tmp_path / "p")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sorisk", "toy", "--seed", "1", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("toy:")
