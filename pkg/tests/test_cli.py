import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from dbce.cli import main
from dbce.dbcpi import DbcpiConfig, dbcpi_run
from dbce.environments import requirement_preset
from dbce.game import MarkovGame, requirement_score, rollout, save_game


def test_solve_matches_library(tmp_path, fair_gamble, capsys):
    out = tmp_path / "r.json"
    code = main(["solve", "--game", "fairgamble", "--task", "safety", "--method", "dbce",
                 "--seed", "1", "--iters", "6", "--out", str(out)])
    assert code == 0
    data = json.loads(out.read_text())
    obj, _ = requirement_preset("fairgamble", "safety", fair_gamble)
    lib = dbcpi_run(fair_gamble, obj, DbcpiConfig(iterations=6, seed=1))
    assert data["trace"] == lib.trace
    assert data["error"] == lib.error and data["max_reg"] == lib.max_reg
    assert data["policy"] == lib.policy.tolist()
    assert (data["game"], data["task"], data["method"], data["seed"]) == ("fairgamble", "safety", "dbce", 1)
    assert "error=" in capsys.readouterr().out


def test_solve_defaults_to_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("DBCE_OUTPUT_DIR", str(tmp_path / "res"))
    assert main(["solve", "--game", "cae", "--task", "safety", "--method", "cm-5", "--iters", "2"]) == 0
    assert (tmp_path / "res" / "cae_safety_cm-5_s0.json").exists()


def test_solve_without_runtime_is_reproducible(tmp_path):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        main(["solve", "--game", "fairgamble", "--task", "fairness", "--iters", "3", "--no-runtime", "--out", str(p)])
    assert paths[0].read_bytes() == paths[1].read_bytes()


@pytest.mark.parametrize("argv", [
    [],
    ["solve"],
    ["solve", "--game", "fairgamble", "--iters", "ten"],
    ["solve", "--game", "chess"],
    ["solve", "--game", "hunters", "--task", "fairness", "--method", "rm-1.5"],
    ["solve", "--game", "hunters", "--method", "nash"],
    ["solve", "--game", "hunters", "--iters", "0"],
    ["solve", "--game", "fairgamble", "--eval-mode", "mc"],
    ["frobnicate"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_run_failure_exits_two(tmp_path, capsys):
    code = main(["solve", "--game", "fairgamble", "--task", "safety", "--method", "cm-0.05",
                 "--iters", "2", "--out", str(tmp_path / "x.json")])
    assert code == 2
    assert "InfeasibleStage" in capsys.readouterr().err


def test_rollout_scores_match_direct_call(tmp_path, fair_gamble, capsys):
    policy = np.full((3, 9), 1 / 9)
    pfile = tmp_path / "pi.json"
    pfile.write_text(json.dumps(policy.tolist()))
    out = tmp_path / "traj.csv"
    assert main(["rollout", "--game", "fairgamble", "--task", "fairness", "--policy", str(pfile),
                 "--steps", "50", "--episodes", "3", "--seed", "4", "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    _, req = requirement_preset("fairgamble", "fairness", fair_gamble)
    seeds = np.random.SeedSequence(4).spawn(3)
    direct = [requirement_score(rollout(fair_gamble, policy, 50, int(s.generate_state(1)[0])), req) for s in seeds]
    assert printed["scores"] == direct
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 50 and rows[0]["state"] in ("G1", "G2", "G3")


def test_rollout_accepts_solve_output(tmp_path, capsys):
    res = tmp_path / "r.json"
    main(["solve", "--game", "cae", "--task", "fairness", "--iters", "3", "--out", str(res)])
    capsys.readouterr()
    assert main(["rollout", "--game", "cae", "--task", "fairness", "--policy", str(res), "--steps", "30"]) == 0
    assert json.loads(capsys.readouterr().out)["requirement"] == "fairness"


def test_rollout_rejects_wrong_policy_shape(tmp_path):
    pfile = tmp_path / "pi.json"
    pfile.write_text("[[1.0]]")
    assert main(["rollout", "--game", "cae", "--policy", str(pfile)]) == 1


def test_validate(tmp_path, hunters, capsys):
    good = tmp_path / "h.json"
    save_game(hunters, good)
    assert main(["validate", str(good)]) == 0
    assert "8 states" in capsys.readouterr().out
    bad_game = MarkovGame(["s"], (2,), np.full((1, 2, 1), 0.5), np.zeros((1, 1, 2)), [1.0], 0.9)
    bad = tmp_path / "bad.json"
    save_game(bad_game, bad)
    assert main(["validate", str(bad)]) == 2
    assert "deficit 0.5" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "nope.json")]) == 1


def test_dump_lp(tmp_path, capsys):
    assert main(["dump-lp", "--game", "fairgamble", "--task", "fairness"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("minimize\n obj: 1 t\n")
    assert " epi_pos: " in text and text.rstrip().endswith("end")
    q = tmp_path / "q.npy"
    np.save(q, np.ones((2, 3, 9)))
    out = tmp_path / "lp.txt"
    assert main(["dump-lp", "--game", "fairgamble", "--method", "cm-5", "--q", str(q), "--out", str(out)]) == 0
    assert out.read_text().startswith("maximize")
    assert " cap: " in out.read_text()


def test_experiment_writes_all_reports(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"runs": [["fairgamble", "safety", "dbce"], ["fairgamble", "safety", "rm-1.5"]],
                               "seeds": [0, 1], "dbcpi": {"iterations": 3}}))
    out = tmp_path / "out"
    assert main(["experiment", "--config", str(cfg), "--out", str(out), "--no-runtime"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["aggregate.csv", "report.json", "runs.csv", "trace.csv"]
    assert len(json.loads((out / "report.json").read_text())["runs"]) == 4
    assert "rm-1.5" in capsys.readouterr().out


def test_experiment_with_failures_exits_two(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"runs": [["fairgamble", "safety", "cm-0"]], "seeds": [0], "dbcpi": {"iterations": 2}}))
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert (tmp_path / "o" / "report.json").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dbce", "solve", "--game", "fairgamble", "--iters", "2",
                           "--out", str(tmp_path / "r.json")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "dbce", "solve"], capture_output=True, text=True)
    assert proc.returncode == 1
