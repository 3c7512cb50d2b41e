import json
from pathlib import Path

import pytest

from evoforge.cli import main

ROOT = Path(__file__).resolve().parents[1]
SMALL = "phases = 1\ntasks_per_phase = 6\nepochs = 2\npretrain_steps = 20\nparallelism = 1\n"


def _config(tmp_path, extra=""):
    p = tmp_path / "small.toml"
    p.write_text(SMALL + extra)
    return p


def test_reward_wait(capsys):
    assert main(["reward", "--pred", "wait()", "--ref", "wait()", "--geom", "100x100"]) == 0
    out = capsys.readouterr().out
    assert "total 2.000000" in out


def test_reward_json(capsys):
    assert main(["reward", "--json", "--pred", "drag(box=(0,0,10,10))", "--ref", "drag(box=(5,5,15,15))"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total"] == pytest.approx(1 + 1 / 7)


def test_reward_bad_action(capsys):
    assert main(["reward", "--pred", "jump()", "--ref", "wait()"]) == 1


def test_reward_zero_geometry():
    assert main(["reward", "--pred", "wait()", "--ref", "wait()", "--geom", "0x10"]) == 2


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_validate_fixture(monkeypatch, capsys):
    monkeypatch.chdir(ROOT)
    assert main(["validate-env", "fixtures/paint-lite.env"]) == 0
    assert "paint-lite" in capsys.readouterr().out


def test_validate_broken(tmp_path, capsys):
    p = tmp_path / "bad.env"
    p.write_text('{"name": "x"}')
    assert main(["validate-env", "--json", str(p)]) == 2
    assert json.loads(capsys.readouterr().out)["valid"] is False


def test_run_missing_config():
    assert main(["run", "--config", "missing.toml"]) == 2


def test_run_and_inspect(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    first = capsys.readouterr().out
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "run2")]) == 0
    second = capsys.readouterr().out
    assert first.replace("run2", "run") == second.replace("run2", "run")
    traj = tmp_path / "run" / "phase_0" / "trajectories.jsonl"
    assert main(["inspect", "--json", "--traj", str(traj)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["episodes"] == 4
    eid = json.loads(traj.read_text().splitlines()[0])["episode_id"]
    assert main(["inspect", "--traj", str(traj), "--episode", eid]) == 0
    assert eid in capsys.readouterr().out
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "run3"), "--require-success", "1.01"]) == 4


def test_remote_backend_unreachable(tmp_path, monkeypatch):
    monkeypatch.delenv("EVOFORGE_BACKEND_URL", raising=False)
    cfg = _config(tmp_path, 'judge_backend = "remote"\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 3


def test_distill(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "spec")]) == 0
    capsys.readouterr()
    assert main(["distill", "--json", "--runs", str(tmp_path / "spec"), "--out", str(tmp_path / "gen")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert "general" in doc and (tmp_path / "gen" / "policy_distilled.npz").exists()


def test_bench_judge(tmp_path, capsys):
    (tmp_path / "gt.jsonl").write_text('{"episode_id": "a", "success": true}\n{"episode_id": "b", "success": false}\n')
    (tmp_path / "p.jsonl").write_text('{"episode_id": "a", "Correctness": true}\n{"episode_id": "b", "Correctness": true}\n')
    assert main(["bench-judge", "--pred", str(tmp_path / "p.jsonl"), "--gt", str(tmp_path / "gt.jsonl")]) == 0
    assert "precision=0.500" in capsys.readouterr().out
