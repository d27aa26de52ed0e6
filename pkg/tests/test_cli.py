import json
import os
from pathlib import Path

import numpy as np
import pytest

from molood.cli import main
from molood.config import CONFIG_ENV, RunConfig, config_from_dict, load_config
from molood.errors import BadConfig, CheckpointError, ManifestMismatch, RunLocked
from molood.io import (decode_checkpoint, dump_json, encode_checkpoint, read_jsonl, sha256_file,
                       write_jsonl)
from molood.runs import run_lock, verify_manifest, write_manifest

TINY = {"dataset": "synthetic:planted", "k_total": 8, "n_source": 6, "task_threshold": 10,
        "baseline_epochs": 2, "shallow_epochs": 1, "warm_epochs": 1, "finetune_epochs": 1,
        "grpo_steps": 1, "group_size": 4, "e_proxy": 1, "max_group_samples": 8, "pool_size": 10,
        "max_tasks": 2}


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def _pipeline(root: Path, cfg: Path):
    assert main(["bench", "build", "--config", str(cfg), "--seed", "3", "--out", str(root / "b")]) == 0
    assert main(["train", "baseline", "--bench", str(root / "b"), "--out", str(root / "r")]) == 0
    assert main(["poma", "run", "--baseline", str(root / "r"), "--policy", "grpo,random",
                 "--out", str(root / "p")]) == 0
    return {d: json.loads((root / d / "manifest.json").read_text()) for d in ("b", "r", "p")}


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory, tiny_cfg):
    os.environ.pop(CONFIG_ENV, None)
    roots = [tmp_path_factory.mktemp(f"run{i}") for i in range(2)]
    return roots, [_pipeline(r, tiny_cfg) for r in roots]


def test_pipeline_outputs(pipeline_runs):
    (root, _), (man, _) = pipeline_runs
    assert {"dataset.csv", "split.json", "audit.json", "report.txt"} <= set(man["b"]["outputs"])
    assert {"baseline.ckpt", "warm.ckpt", "history.jsonl", "report.json"} <= set(man["r"]["outputs"])
    assert {"policy.ckpt", "rollouts.jsonl", "report.json"} <= set(man["p"]["outputs"])
    report = json.loads((root / "p" / "report.json").read_text())
    assert set(report["policies"]) == {"grpo", "random"}
    log = read_jsonl(root / "p" / "rollouts.jsonl")
    assert {"step", "action", "valid", "reward", "advantage", "kl", "loss"} <= set(log[0])
    for d in ("b", "r", "p"):
        verify_manifest(root / d)


def test_rerun_is_byte_identical(pipeline_runs):
    _, (a, b) = pipeline_runs
    for d in ("b", "r", "p"):
        assert a[d]["outputs"] == b[d]["outputs"], d


def test_audit_and_report(pipeline_runs, tmp_path, capsys):
    (root, _), _ = pipeline_runs
    assert main(["bench", "audit", "--bench", str(root / "b")]) == 0
    assert "PASS" in capsys.readouterr().out
    assert main(["report", str(root / "r"), str(root / "p"), "--out", str(tmp_path / "rep")]) == 0
    text = (tmp_path / "rep" / "report.txt").read_text()
    assert "grpo/full" in text and "baseline/strict" in text


def test_tampered_output_exit_4(pipeline_runs, tmp_path):
    (root, _), _ = pipeline_runs
    import shutil
    bench = tmp_path / "b"
    shutil.copytree(root / "b", bench)
    with open(bench / "split.json", "a") as fh:
        fh.write(" ")
    assert main(["bench", "audit", "--bench", str(bench)]) == 4


def test_locked_run_exit_5(tiny_cfg, tmp_path):
    out = tmp_path / "b"
    out.mkdir()
    (out / ".lock").write_text("1")
    assert main(["bench", "build", "--config", str(tiny_cfg), "--out", str(out)]) == 5


def test_bad_dataset_exit_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,smiles,label\nm1,C1CC[,1.0\n")
    assert main(["bench", "build", "--dataset", str(bad), "--out", str(tmp_path / "o")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"no_such_key": 1}')
    assert main(["bench", "build", "--config", str(cfg), "--out", str(tmp_path / "o2")]) == 2


def test_infeasible_clustering_exit_3(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**TINY, "k_total": 500, "n_source": 400}))
    assert main(["bench", "build", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_env_var_overrides_config(tiny_cfg, tmp_path, monkeypatch):
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**TINY, "n_proj": 16}))
    monkeypatch.setenv(CONFIG_ENV, str(other))
    assert load_config(tiny_cfg).n_proj == 16
    assert main(["bench", "build", "--config", str(tiny_cfg), "--out", str(tmp_path / "b")]) == 0
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["config"]["n_proj"] == 16


def _fake_baseline(d: Path, split: str, mae: float):
    d.mkdir()
    (d / "report.json").write_text(dump_json({"split": split, "mean_mae": mae, "tasks": {}}))
    write_manifest(d, "train baseline", {}, 0, {}, ["report.json"], {})


def test_report_degradation_factor(tmp_path, capsys):
    _fake_baseline(tmp_path / "strict", "strict", 0.06)
    _fake_baseline(tmp_path / "random", "random", 0.02)
    assert main(["report", str(tmp_path / "strict"), str(tmp_path / "random")]) == 0
    out = capsys.readouterr().out
    assert "Degradation factor" in out and "3.00x" in out


# ---------------------------------------------------------------- io and run directories

def test_checkpoint_envelope_round_trip():
    x = np.random.default_rng(0).normal(size=17)
    blob = encode_checkpoint("encoder", {"a": 1}, x)
    header, y = decode_checkpoint(blob, "encoder")
    assert header["a"] == 1 and np.array_equal(x, y)
    assert encode_checkpoint("encoder", {"a": 1}, x) == blob
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:-1] + bytes([blob[-1] ^ 1]))
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob, "policy")
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"NOTACKPT" + blob[8:])


def test_jsonl_round_trip(tmp_path):
    recs = [{"step": 0, "r": 0.5}, {"step": 1, "r": None}]
    write_jsonl(tmp_path / "x.jsonl", recs)
    assert read_jsonl(tmp_path / "x.jsonl") == recs


def test_run_lock_and_manifest(tmp_path):
    with run_lock(tmp_path / "r") as d:
        with pytest.raises(RunLocked):
            with run_lock(d):
                pass
        (d / "a.txt").write_text("hello")
        m = write_manifest(d, "cmd", {}, 1, {}, ["a.txt"], {"t": 0.1234})
    assert not (tmp_path / "r" / ".lock").exists()
    assert m["outputs"]["a.txt"] == sha256_file(tmp_path / "r" / "a.txt")
    verify_manifest(tmp_path / "r")
    (tmp_path / "r" / "a.txt").write_text("changed")
    with pytest.raises(ManifestMismatch):
        verify_manifest(tmp_path / "r")


def test_config_validation():
    assert config_from_dict({}) == RunConfig()
    with pytest.raises(BadConfig):
        config_from_dict({"bogus": 1})
    with pytest.raises(BadConfig):
        config_from_dict({"group_size": 1})
