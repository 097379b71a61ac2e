import io
import json

import pytest

from hvrs.cli import main
from hvrs.config import Config
from hvrs.tasks.io import load_tasks


@pytest.fixture(scope="module")
def task_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "t.json"
    assert main(["gen-tasks", "--n-train", "4", "--n-unseen", "2", "--seed", "1", "--out", str(path)]) == 0
    return path


def test_gen_then_split_doubles(tmp_path, capsys):
    path = tmp_path / "t.json"
    assert main(["gen-tasks", "--n-train", "4", "--n-unseen", "0", "--seed", "1", "--out", str(path)]) == 0
    assert len(load_tasks(str(path))) == 4
    assert main(["split-pretrain", "--in", str(path), "--out", str(tmp_path / "s.json")]) == 0
    assert "8 single-object tasks" in capsys.readouterr().out


def test_eval_needs_exactly_one_controller(task_file, capsys):
    assert main(["eval", "--policy", "p.ckpt", "--teachers", "a", "b", "--tasks", str(task_file)]) == 1
    assert main(["eval", "--tasks", str(task_file)]) == 1
    assert "exactly one" in capsys.readouterr().err


def test_unknown_flag_prints_usage(capsys):
    assert main(["gen-tasks", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main([]) == 1


def test_runtime_errors_exit_2(tmp_path, capsys):
    assert main(["split-pretrain", "--in", str(tmp_path / "missing.json")]) == 2
    assert main(["eval", "--policy", str(tmp_path / "missing.ckpt"), "--tasks", str(tmp_path / "x.json")]) == 2
    assert "hvrs: error" in capsys.readouterr().err


def test_oracle_eval_json_and_episode_log(task_file, tmp_path):
    out, eps = tmp_path / "r.json", tmp_path / "e.jsonl"
    assert main(["eval", "--oracle", "--tasks", str(task_file), "--split", "unseen", "--format", "json",
                 "--out", str(out), "--episodes-out", str(eps)]) == 0
    report = json.loads(out.read_text())
    assert report["episodes"] == 2 and report["success_all"] <= min(report["success1"], report["success2"])
    unseen = {t.id for t in load_tasks(str(task_file)) if t.split == "unseen"}
    assert {json.loads(line)["task_id"] for line in eps.read_text().splitlines()} == unseen


def test_print_config_dumps_defaults(capsys):
    assert main(["--print-config"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert set(data) >= {"sim", "rewards", "amp", "stages", "dagger", "eval"}
    assert data == json.loads(Config().to_json())


def test_config_flag_after_subcommand(tmp_path, task_file, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eval": {"episode_cap": 5}}))
    eps = tmp_path / "e.jsonl"
    assert main(["eval", "--oracle", "--tasks", str(task_file), "--config", str(cfg), "--episodes-out", str(eps)]) == 0
    assert all(json.loads(line)["steps"] == 5 for line in eps.read_text().splitlines())


def test_train_stage2_requires_init(task_file, tmp_path):
    assert main(["train", "--stage", "2", "--tasks", str(task_file), "--out", str(tmp_path)]) == 1


def test_interactive_run_issues_instruction_by_hand(task_file, monkeypatch, capsys):
    task_id = next(t.id for t in load_tasks(str(task_file)) if t.split == "train")
    monkeypatch.setattr("sys.stdin", io.StringIO("step 5\nnext\nstep 3\nbogus\nquit\n"))
    assert main(["run", "--oracle", "--tasks", str(task_file), "--task", task_id, "--interactive"]) == 0
    out = capsys.readouterr().out
    assert "instruction 2 issued by hand" in out
    assert "instruction 2 (latched)" in out
    assert "unknown command 'bogus'" in out


def test_run_unknown_task(task_file):
    assert main(["run", "--oracle", "--tasks", str(task_file), "--task", "nope"]) == 2
