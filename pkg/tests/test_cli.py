import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from motortemp.cli import dispatch, resolve_config
from motortemp.errors import ConfigError
from motortemp.losses import mae, mse, r_squared, linf

FAST = {
    "preprocess": {"spans": [2, 4, 8, 16, 32, 64, 128, 256], "seq_len": 8},
    "train": {"max_epochs": 2, "patience": 2, "batch": 64, "chunk_len": 8},
}


def tree_digest(path: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert dispatch(["generate", "--profiles", "3", "--hours", "1.5", "--seed", "7", "--out", str(root / "data")]) == 0
    (root / "fast.json").write_text(json.dumps(FAST))
    return root


def recompute(traces: Path) -> dict:
    rows = list(csv.DictReader(traces.open()))
    out = {}
    for name in ("T_W", "T_DE", "T_NDE"):
        a = np.array([float(r["actual_C"]) for r in rows if r["target"] == name])
        p = np.array([float(r["predicted_C"]) for r in rows if r["target"] == name])
        out[name] = {"mse": mse(a, p), "mae": mae(a, p), "linf": linf(a, p), "r2": r_squared(a, p)}
    return out


class TestGenerate:
    def test_layout(self, workspace):
        data = workspace / "data"
        manifest = json.loads((data / "manifest.json").read_text())
        assert len(manifest["profiles"]) == 3
        assert all((data / p["file"]).exists() for p in manifest["profiles"])
        run = json.loads((data / "run.json").read_text())
        assert run["command"] == "generate" and run["seed"] == 7
        assert run["config"]["lptn"]["sigma_noise"] == 0.2

    def test_eighteen_profiles(self, tmp_path):
        assert dispatch(["generate", "--profiles", "18", "--hours", "3", "--seed", "7", "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("*.csv"))) == 18


class TestPipeline:
    @pytest.mark.parametrize("model", ["linear", "mlp", "cnn"])
    def test_train_evaluate_recompute(self, workspace, model):
        data, cfg = str(workspace / "data"), str(workspace / "fast.json")
        before = tree_digest(workspace / "data")
        run = workspace / f"train_{model}"
        assert dispatch(["train", "--model", model, "--data", data, "--config", cfg, "--seed", "3", "--out", str(run)]) == 0
        ckpt = json.loads((run / "checkpoint.json").read_text())
        assert ckpt["format"] == 1 and ckpt["kind"] == model
        ev = workspace / f"eval_{model}"
        assert dispatch(["evaluate", "--checkpoint", str(run / "checkpoint.json"), "--data", data, "--out", str(ev)]) == 0
        test_id = ckpt["split"]["test_ids"][0]
        reported = {m["target"]: m for m in json.loads((ev / f"{test_id}_metrics.json").read_text())}
        for name, vals in recompute(ev / f"{test_id}_traces.csv").items():
            for key, v in vals.items():
                assert abs(v - reported[name][key]) <= 1e-9 * max(1.0, abs(v))
        rows = list(csv.DictReader((ev / f"{test_id}_traces.csv").open()))
        n = sum(1 for _ in (workspace / "data" / f"{test_id}.csv").open()) - 1
        assert len(rows) == 3 * n
        assert all(float(r["error_C"]) == float(r["actual_C"]) - float(r["predicted_C"]) for r in rows[:50])
        assert (ev / f"{test_id}_inputs.csv").read_text().startswith("t,n_m,I_m,T_ref\n")
        assert tree_digest(workspace / "data") == before

    def test_predict(self, workspace, tmp_path):
        data, cfg = str(workspace / "data"), str(workspace / "fast.json")
        run = tmp_path / "run"
        assert dispatch(["train", "--model", "linear", "--data", data, "--config", cfg, "--out", str(run)]) == 0
        src = next((workspace / "data").glob("p00_*.csv"))
        inp = tmp_path / "in.csv"
        lines = src.read_text().splitlines()
        inp.write_text("\n".join(",".join(line.split(",")[:4]) for line in lines) + "\n")
        assert dispatch(["predict", "--checkpoint", str(run / "checkpoint.json"), "--input", str(inp), "--out", str(tmp_path / "p")]) == 0
        pred = list(csv.reader((tmp_path / "p" / "predictions.csv").open()))
        assert pred[0] == ["t", "T_W_pred", "T_DE_pred", "T_NDE_pred"]
        assert len(pred) == len(lines)

    def test_loo_and_replay(self, workspace, tmp_path):
        data, cfg = str(workspace / "data"), str(workspace / "fast.json")
        a, b = tmp_path / "a", tmp_path / "b"
        assert dispatch(["loo", "--model", "mlp", "--data", data, "--config", cfg, "--seed", "2", "--out", str(a)]) == 0
        assert dispatch(["replay", str(a / "run.json"), "--out", str(b)]) == 0
        assert (a / "folds.json").read_bytes() == (b / "folds.json").read_bytes()
        doc = json.loads((a / "folds.json").read_text())
        assert len(doc["folds"]) == 3 and "summary" in doc

    def test_train_replay_bit_identical(self, workspace, tmp_path):
        data, cfg = str(workspace / "data"), str(workspace / "fast.json")
        a, b = tmp_path / "a", tmp_path / "b"
        assert dispatch(["train", "--model", "cnn", "--data", data, "--config", cfg, "--seed", "4", "--out", str(a)]) == 0
        assert dispatch(["replay", str(a / "run.json"), "--out", str(b)]) == 0
        assert (a / "checkpoint.json").read_bytes() == (b / "checkpoint.json").read_bytes()

    def test_search(self, workspace, tmp_path):
        data = str(workspace / "data")
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({**FAST, "space": {"mlp_neurons": [2, 5]}}))
        out = tmp_path / "s"
        assert dispatch(["search", "--model", "mlp", "--data", data, "--config", str(cfg), "--budget", "2", "--out", str(out)]) == 0
        board = json.loads((out / "leaderboard.json").read_text())
        assert len(board["entries"]) + len(board["failed"]) == 2
        assert all(2 <= w <= 5 for e in board["entries"] for w in e["config"]["model"]["widths"])


class TestErrors:
    def test_unknown_command(self, capsys):
        assert dispatch(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_command(self):
        assert dispatch([]) == 1

    def test_bad_flag(self, tmp_path):
        assert dispatch(["generate", "--out", str(tmp_path), "--bogus"]) == 1

    def test_missing_data(self, tmp_path, capsys):
        rc = dispatch(["train", "--model", "linear", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)])
        assert rc == 2
        err = capsys.readouterr().err.strip()
        assert err.startswith("error:") and "\n" not in err

    def test_divergence_exit(self, workspace, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({**FAST, "train": {"lr": 1e8, "schedule": "constant", "max_epochs": 3}}))
        rc = dispatch(["train", "--model", "mlp", "--data", str(workspace / "data"), "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 3

    def test_config_kind_mismatch(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"model": {"kind": "cnn"}}))
        with pytest.raises(ConfigError):
            resolve_config("mlp", str(cfg), 0)

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "motortemp.cli", "nope"], capture_output=True, text=True)
        assert proc.returncode == 1 and proc.stderr


class TestResolve:
    def test_defaults_are_table_values(self):
        assert resolve_config("linear", None, None)["model"] == {"kind": "linear", "penalty": 0.43, "mixing": 0.99}
        mlp = resolve_config("mlp", None, None)["model"]
        assert mlp["widths"] == [90, 20]
        cnn = resolve_config("cnn", None, 5)
        assert cnn["model"]["filters"] == [125, 5, 125] and cnn["model"]["dilations"] == [3, 1, 1]
        assert cnn["train"]["seed"] == 5
