import json
import os

import numpy as np
import pytest

from hvrs.config import AmpConfig, Config, DaggerConfig, StagesConfig
from hvrs.distill.dagger import load_teacher_policy
from hvrs.nn.checkpoint import load_checkpoint
from hvrs.training import stages


def tiny_config(epochs1=4) -> Config:
    per = {"1": {"epochs": epochs1, "envs": 2, "steps": 16},
           "2": {"epochs": 2, "envs": 2, "steps": 16},
           "3": {"epochs": 2, "envs": 2, "steps": 16}}
    return Config(stages=StagesConfig(pretrain_bc_epochs=2, pretrain_dagger_rounds=1, pretrain_dagger_epochs=1,
                                      pretrain_rollouts=1, checkpoint_every=1, per_stage=per),
                  amp=AmpConfig(reference_transitions=200), dagger=DaggerConfig(rounds=1, train_epochs=1))


def read_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh]


@pytest.fixture(scope="module")
def few_singles(singles):
    return singles[:4]


def test_pool_contains_both_spawn_variants(few_singles):
    trajs, goal_idx, clean = stages.demonstration_pool(few_singles, tiny_config(), seed=0)
    assert sorted(set(goal_idx)) == [0, 1]
    assert len(trajs) == len(few_singles)
    for single, traj in zip(few_singles, trajs):
        if single.sub_task_index == 1:
            assert traj[0].agent.root.x == single.spawn.root.x


def test_stage1_rejects_empty_pool(tmp_path):
    with pytest.raises(ValueError):
        stages.run_stage1([], tiny_config(), 0, str(tmp_path))


def test_stage1_resume_is_bit_exact(few_singles, tmp_path):
    full, part = tmp_path / "full", tmp_path / "part"
    stages.run_stage1(few_singles, tiny_config(4), 0, str(full))
    stages.run_stage1(few_singles, tiny_config(2), 0, str(part))
    stages.run_stage1(few_singles, tiny_config(4), 0, str(part), resume=True)
    assert (full / "stage1.ckpt").read_bytes() == (part / "stage1.ckpt").read_bytes()
    assert read_log(full / "stage1.jsonl") == read_log(part / "stage1.jsonl")


def test_stage1_log_has_one_record_per_epoch(few_singles, tmp_path):
    stages.run_stage1(few_singles, tiny_config(3), 0, str(tmp_path))
    log = read_log(tmp_path / "stage1.jsonl")
    assert [r["epoch"] for r in log] == [-1, 0, 1, 2]
    for r in log[1:]:
        assert {"mean_reward", "value_loss", "clip_frac", "term_means", "successes"} <= set(r)
    assert log[0]["bc_pretrain_loss"]


def test_stage2_uses_only_the_release_reward(few_singles, tmp_path):
    cfg = tiny_config(1)
    p1 = stages.run_stage1(few_singles, cfg, 0, str(tmp_path))
    p2 = stages.run_stage2(p1, few_singles, cfg, 0, str(tmp_path))
    log = read_log(tmp_path / "stage2.jsonl")
    assert log and all(r["stage"] == 2 and "term_means" not in r for r in log)
    assert int(load_checkpoint(p2)["meta.stage"][0]) == 2


def test_stage3_precondition(few_singles, small_tasks, tmp_path):
    cfg = tiny_config(1)
    p1 = stages.run_stage1(few_singles, cfg, 0, str(tmp_path))
    p2 = stages.run_stage2(p1, few_singles, cfg, 0, str(tmp_path))
    before = stages.policy_digest(load_teacher_policy(p2))
    with pytest.raises(stages.StagePreconditionError, match="stage-3 precondition unmet"):
        stages.run_stage3(p2, p1, [t for t in small_tasks if t.split == "train"][:2], cfg, 0, str(tmp_path))
    assert stages.policy_digest(load_teacher_policy(p2)) == before
    assert not os.path.exists(tmp_path / "stage3.ckpt")


def test_teacher_checkpoint_round_trip(tmp_path):
    cfg = tiny_config()
    t = stages.Teacher.fresh(np.random.default_rng(0), cfg, stage=1)
    t.epoch = 7
    path = str(tmp_path / "t.ckpt")
    t.save(path)
    u = stages.Teacher.load(path, cfg)
    assert u.epoch == 7 and u.stage == 1
    assert stages.policy_digest(u.policy) == stages.policy_digest(t.policy)
    fresh_stage = stages.Teacher.load(path, cfg, stage=2, with_optim=False)
    assert fresh_stage.epoch == 0 and fresh_stage.stage == 2


def test_wrong_feature_width_rejected(tmp_path):
    from hvrs.nn.checkpoint import save_checkpoint
    from hvrs.nn.policy import make_policy
    cfg = tiny_config()
    t = stages.Teacher.fresh(np.random.default_rng(0), cfg, stage=1)
    entries = t.entries()
    entries.update(make_policy(5, (4,), np.random.default_rng(0)).entries("policy"))
    path = str(tmp_path / "bad.ckpt")
    save_checkpoint(entries, path)
    with pytest.raises(ValueError, match="features"):
        stages.Teacher.load(path, cfg)
