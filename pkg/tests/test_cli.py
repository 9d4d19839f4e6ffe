import csv
import json

import numpy as np
import pytest

from subgoal_discovery import cli
from subgoal_discovery.datagen import Dataset, Trajectory, gen_color3
from subgoal_discovery.io import file_digest, save_dataset
from subgoal_discovery.seqnmf import FitAborted


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def color_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("color")
    assert run("generate", "color3-simple", "--n-seq", 8, "--T", 30, "--out", root / "d") == 0
    assert run("fit", "--data", root / "d", "--max-iter", 40, "--out", root / "f") == 0
    return root


@pytest.fixture(scope="module")
def driving_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("driving")
    assert run("generate", "driving", "--n-per-task", 3, "--out", root / "d") == 0
    assert run("fit", "--data", root / "d", "--max-iter", 20, "--out", root / "f") == 0
    return root


def read_json(p):
    return json.loads(p.read_text())


# generate


def test_generate_color10_default_size_and_determinism(tmp_path, capsys):
    assert run("generate", "color10", "--seed", 7, "--out", tmp_path / "a") == 0
    assert capsys.readouterr().out.strip().endswith("manifest.json")
    assert len(list((tmp_path / "a").glob("traj_*.csv"))) == 100
    assert run("generate", "color10", "--seed", 7, "--out", tmp_path / "b") == 0
    assert file_digest(tmp_path / "a" / "manifest.json") == file_digest(tmp_path / "b" / "manifest.json")
    assert read_json(tmp_path / "a" / "run.json")["config"]["seed"] == 7


def test_generate_driving_count(tmp_path):
    assert run("generate", "driving", "--n-per-task", 5, "--out", tmp_path) == 0
    assert len(read_json(tmp_path / "manifest.json")["trajectories"]) == 10


def test_generate_unknown_generator(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("generate", "kitchen", "--out", tmp_path)
    assert exc.value.code == 2


def test_generate_bad_params(tmp_path, capsys):
    assert run("generate", "color3-simple", "--T", 31, "--out", tmp_path) == 2
    assert "error" in capsys.readouterr().err


def test_generate_unwritable_out(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("generate", "color3-simple", "--n-seq", 2, "--T", 9, "--out", blocker / "sub") == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": {"n_seq": 4, "T": 12}}))
    assert run("generate", "color3-simple", "--config", cfg, "--T", 9, "--out", tmp_path / "d") == 0
    params = read_json(tmp_path / "d" / "manifest.json")["params"]
    assert params["n_seq"] == 4 and params["T"] == 9


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    assert run("generate", "color3-simple", "--config", cfg, "--out", tmp_path / "d") == 2


# citest


def test_citest_color3(tmp_path, capsys):
    save_dataset(gen_color3("simple", n_seq=40, T=60, seed=0), tmp_path / "d")
    assert run("citest", "--data", tmp_path / "d", "--out", tmp_path / "ci") == 0
    out = capsys.readouterr().out
    assert "selection confirmed: yes" in out
    report = read_json(tmp_path / "ci" / "ci_report.json")
    verdicts = {(r["condition"], r["protocol"]): r["verdict"] for r in report["results"]}
    assert verdicts[(1, "single_step")] == "dependent"
    assert verdicts[(3, "single_step")] == "independent"


def test_citest_negative_control_note(tmp_path, capsys):
    ds = gen_color3("simple", n_seq=40, T=60, seed=0)
    r = np.random.default_rng(0)
    noise = [Trajectory(t.states, t.actions, r.integers(0, 3, size=len(t)), t.boundaries) for t in ds.trajectories]
    save_dataset(Dataset(noise, ds.meta), tmp_path / "d")
    assert run("citest", "--data", tmp_path / "d", "--out", tmp_path / "ci") == 0
    assert "selection not confirmed" in capsys.readouterr().out


def test_citest_missing_dataset(tmp_path):
    assert run("citest", "--data", tmp_path / "nothing", "--out", tmp_path / "ci") == 2


# fit


def test_fit_outputs(color_dirs):
    f = color_dirs / "f"
    for name in ("O.csv", "H.csv", "loss_trace.csv", "fit.json", "loss_trace.svg", "run.json"):
        assert (f / name).exists()
    info = read_json(f / "fit.json")
    assert info["config"]["J"] == 3 and info["config"]["L"] == 3
    assert info["iterations_run"] <= 40
    assert info["generator"] == "color3-simple"
    assert "<svg" in (f / "loss_trace.svg").read_text()


def test_fit_lambda_bin_zero(color_dirs, tmp_path):
    assert run("fit", "--data", color_dirs / "d", "--max-iter", 40, "--lambda-bin", 0, "--out", tmp_path) == 0
    with open(tmp_path / "loss_trace.csv") as fh:
        assert all(float(row["r_bin"]) == 0 for row in csv.DictReader(fh))


def test_fit_reproducible_bytes(color_dirs, tmp_path):
    assert run("fit", "--data", color_dirs / "d", "--max-iter", 40, "--out", tmp_path) == 0
    for name in ("O.csv", "H.csv", "fit.json", "loss_trace.svg"):
        assert file_digest(tmp_path / name) == file_digest(color_dirs / "f" / name)


def test_fit_abort_exit_code(color_dirs, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise FitAborted("H update produced non-finite entries")

    monkeypatch.setattr(cli, "fit_restarts", boom)
    assert run("fit", "--data", color_dirs / "d", "--out", tmp_path) == 1
    assert "non-finite" in capsys.readouterr().err


def test_fit_bad_hyperparameter(color_dirs, tmp_path):
    assert run("fit", "--data", color_dirs / "d", "--J", 0, "--out", tmp_path) == 2


# eval


def test_eval_outputs(color_dirs, tmp_path, capsys):
    assert run("eval", "--data", color_dirs / "d", "--fit", color_dirs / "f", "--fit", color_dirs / "f",
               "--plot-limit", 2, "--out", tmp_path) == 0
    m = read_json(tmp_path / "metrics.json")
    assert len(m["fits"]) == 2 and m["f1_std"] == 0.0
    assert m["fits"][0]["method"] == "onsets"
    assert m["fits"][0]["exact"]["f1"] <= m["fits"][0]["f1"]
    assert len(list((tmp_path / "dominance").glob("*.svg"))) == 2
    assert len(list((tmp_path / "segmentation").glob("*.csv"))) == 8
    assert (tmp_path / "factorization.svg").exists()
    header = (tmp_path / "segmentation" / "traj_0000.csv").read_text().splitlines()[0]
    assert header == "t,label,g1,g2,g3"
    assert "+-" in capsys.readouterr().out


def test_eval_self_eval(color_dirs, tmp_path):
    assert run("eval", "--data", color_dirs / "d", "--self-eval", "--out", tmp_path) == 0
    assert read_json(tmp_path / "metrics.json")["f1"] == 1.0


def test_eval_J_mismatch(color_dirs, tmp_path, capsys):
    assert run("eval", "--data", color_dirs / "d", "--fit", color_dirs / "f", "--J", 5, "--out", tmp_path) == 2
    assert "J=3" in capsys.readouterr().err


def test_eval_wrong_dataset(color_dirs, driving_dirs, tmp_path):
    assert run("eval", "--data", driving_dirs / "d", "--fit", color_dirs / "f", "--out", tmp_path) == 2


def test_eval_needs_fit(color_dirs, tmp_path):
    assert run("eval", "--data", color_dirs / "d", "--out", tmp_path) == 2


# rollout


def test_rollout_outputs(driving_dirs, tmp_path):
    assert run("rollout", "--fit", driving_dirs / "f", "--out", tmp_path) == 0
    summary = read_json(tmp_path / "summary.json")
    assert set(summary) == {"task0", "task1"}
    assert set(summary["task0"]) == {"terminated", "steps", "switches"}
    assert (tmp_path / "course.svg").exists()
    rows = (tmp_path / "rollout_task0.csv").read_text().splitlines()
    assert rows[0] == "t,x,y,theta,dtheta,subgoal"
    assert len(rows) == summary["task0"]["steps"] + 2


def test_rollout_starved_budget(driving_dirs, tmp_path):
    assert run("rollout", "--fit", driving_dirs / "f", "--max-steps", 1, "--out", tmp_path) == 0
    summary = read_json(tmp_path / "summary.json")
    assert summary["task0"] == {"terminated": False, "steps": 1, "switches": 0}


def test_rollout_rejects_non_driving(color_dirs, tmp_path, capsys):
    assert run("rollout", "--fit", color_dirs / "f", "--out", tmp_path) == 2
    assert "driving" in capsys.readouterr().err


def test_rollout_bad_epsilon(driving_dirs, tmp_path):
    assert run("rollout", "--fit", driving_dirs / "f", "--epsilon", 0, "--out", tmp_path) == 2
