import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvrs.config import Config, EvalConfig
from hvrs.distill.dagger import (GRID_LEVELS, STUDENT_DIM, AggregatedDataset, StudentObservation, beta_schedule,
                                 build_student_observation, dagger_round, load_student, make_student, oracle_teacher,
                                 run_dual_episode, save_student, student_action, student_loss, train_student)
from hvrs.distill.lifecycle import LifecycleState, SwitchThresholds, switch_instruction
from hvrs.nn import mlp
from hvrs.nn.policy import make_policy
from hvrs.sim.engine import reset
from hvrs.sim.sensors import proprioception
from hvrs.sim.state import ACTION_DIM, Pose2Z
from hvrs.training.ppo import bc_loss_grads

TH = SwitchThresholds()


def conditions(speed_ok, dist_ok, far_ok, time_ok):
    return (0.01 if speed_ok else 0.2, 0.3 if dist_ok else 0.8, 1.2 if far_ok else 0.4, 100 if time_ok else 30)


# ---- switching rule ----------------------------------------------------------

def test_documented_trigger():
    lc, m = switch_instruction(0.01, 0.3, 1.2, 100, LifecycleState())
    assert m == 2 and lc.latched


@pytest.mark.parametrize("flags", list(itertools.product([False, True], repeat=4)))
def test_truth_table(flags):
    lc, m = switch_instruction(*conditions(*flags), LifecycleState())
    assert m == (2 if all(flags) else 1)
    assert lc.latched == all(flags)


def test_boundaries_are_strict():
    base = dict(s=0.01, d=0.3, r=1.2, p=100)
    for key, edge in (("s", TH.speed_thresh), ("d", TH.eval_success_thresh), ("r", TH.distance_thresh),
                      ("p", TH.time_thresh)):
        args = dict(base, **{key: edge})
        assert switch_instruction(args["s"], args["d"], args["r"], args["p"], LifecycleState())[1] == 1


def test_latch_survives_reapproach():
    lc, _ = switch_instruction(0.01, 0.3, 1.2, 100, LifecycleState())
    lc, m = switch_instruction(0.01, 0.3, 0.2, 101, lc)
    assert m == 2
    lc, m = switch_instruction(5.0, 9.0, 0.0, 102, lc)
    assert m == 2 and lc.progress_step == 102


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.booleans(), st.booleans()), min_size=1, max_size=30))
def test_latch_monotonicity(seq):
    lc = LifecycleState()
    ms = []
    for flags in seq:
        lc, m = switch_instruction(*conditions(*flags), lc)
        ms.append(m)
    assert ms == sorted(ms)
    first = next((i for i, f in enumerate(seq) if all(f)), None)
    assert ms == [1] * len(seq) if first is None else [1] * first + [2] * (len(seq) - first)


def test_lifecycle_validation():
    with pytest.raises(ValueError):
        LifecycleState(instruction_id=3)
    with pytest.raises(ValueError):
        LifecycleState(instruction_id=1, latched=True)


# ---- student observation -----------------------------------------------------

def test_student_observation_has_no_privileged_fields():
    names = {f.name for f in dataclasses.fields(StudentObservation)}
    assert names == {"grid", "proprio", "tokens"}


def test_goals_are_invisible_to_the_student(train_tasks):
    task = train_tasks[0]
    s = reset(task, 0, 0)
    moved = tuple(dataclasses.replace(g, goal_pose=Pose2Z(g.goal_pose.x + 1.3, g.goal_pose.y - 0.7, 0.0, 2.0),
                                      guides=()) for g in s.goals)
    s2 = dataclasses.replace(s, goals=moved)
    lc = LifecycleState()
    a, b = build_student_observation(s, lc, task), build_student_observation(s2, lc, task)
    assert np.array_equal(a.vector(), b.vector())
    student = make_student(np.random.default_rng(0), Config())
    assert np.array_equal(student_action(student, a), student_action(student, b))


def test_tokens_follow_the_instruction(train_tasks):
    task = train_tasks[0]
    s = reset(task, 0, 0)
    lc1 = LifecycleState()
    lc2, _ = switch_instruction(0.0, 0.0, 2.0, 100, lc1)
    assert build_student_observation(s, lc1, task).tokens == task.sub_tasks[0].instruction.tokens
    assert build_student_observation(s, lc2, task).tokens == task.sub_tasks[1].instruction.tokens
    assert build_student_observation(s, lc2, task).vector().shape == (STUDENT_DIM,)


def test_tokens_flip_in_the_switching_step(train_tasks):
    cfg = Config()
    task = train_tasks[1]
    seen = []

    def watch(state, lc, m, a):
        seen.append((m, build_student_observation(state, lc, task).tokens))

    _, _, lc = run_dual_episode(task, oracle_teacher(cfg.sim), oracle_teacher(cfg.sim), cfg, 0, on_step=watch)
    assert lc.latched
    for m, tokens in seen:
        assert tokens == task.sub_tasks[m - 1].instruction.tokens
    ms = [m for m, _ in seen]
    assert ms == sorted(ms) and ms[0] == 1 and ms[-1] == 2


# ---- rounds ------------------------------------------------------------------

def short_cfg(cap=300):
    return Config(eval=EvalConfig(episode_cap=cap))


def test_beta_one_replays_the_teachers(train_tasks):
    cfg = short_cfg()
    t = oracle_teacher(cfg.sim)
    student = make_student(np.random.default_rng(0), cfg)
    ds, stats = dagger_round(student, t, t, train_tasks[:1], 1.0, AggregatedDataset(10_000), 0, cfg)
    pure = []
    run_dual_episode(train_tasks[0], t, t, cfg, 0, on_step=lambda s, lc, m, a: pure.append(proprioception(s)))
    assert len(ds) == len(pure) == stats["steps"]
    np.testing.assert_array_equal(ds.proprio[:len(ds)], np.array(pure))


def test_beta_zero_still_labels_every_state(train_tasks):
    cfg = short_cfg(120)
    t = oracle_teacher(cfg.sim)
    student = make_student(np.random.default_rng(0), cfg)
    ds, stats = dagger_round(student, t, t, train_tasks[:2], 0.0, AggregatedDataset(10_000), 0, cfg)
    assert stats["added"] == stats["steps"] == 240
    assert np.all(np.isfinite(ds.action[:len(ds)]))


def test_records_replay_with_consistent_teacher_ids(train_tasks):
    cfg = short_cfg(700)
    t = oracle_teacher(cfg.sim)
    student = make_student(np.random.default_rng(0), cfg)
    tasks = train_tasks[:2]
    a, _ = dagger_round(student, t, t, tasks, 0.7, AggregatedDataset(10_000), 5, cfg, round_index=2)
    b, _ = dagger_round(student, t, t, tasks, 0.7, AggregatedDataset(10_000), 5, cfg, round_index=2)
    n = len(a)
    assert n == len(b)
    for name in ("teacher_id", "origin", "action", "proprio", "tokens"):
        assert np.array_equal(getattr(a, name)[:n], getattr(b, name)[:n])
    for i, task in enumerate(tasks):
        rows = np.nonzero(a.origin[:n, 1] == i)[0]
        ids = a.teacher_id[rows]
        assert list(ids) == sorted(ids)
        for r in rows:
            assert tuple(a.tokens[r]) == task.sub_tasks[a.teacher_id[r] - 1].instruction.tokens
        assert list(a.origin[rows, 0]) == [2] * len(rows)


def test_invalid_beta():
    with pytest.raises(ValueError):
        dagger_round(None, None, None, [], 1.5, AggregatedDataset(1), 0, Config())


def test_beta_schedule():
    b = beta_schedule(8)
    assert b[0] == 1.0 and b[-1] == 0.0 and b == sorted(b, reverse=True)
    assert beta_schedule(1) == [1.0]
    with pytest.raises(ValueError):
        beta_schedule(0)


# ---- dataset and regression --------------------------------------------------

def random_obs(rng):
    grid = rng.integers(0, GRID_LEVELS + 1, size=(16, 16, 3)) * (rng.uniform(size=(16, 16, 3)) < 0.1) / GRID_LEVELS
    return StudentObservation(grid, rng.normal(size=10), tuple(int(t) for t in rng.integers(0, 16, 3)))


def test_reservoir_keeps_capacity_and_only_added_records():
    rng = np.random.default_rng(0)
    ds = AggregatedDataset(10, seed=1)
    for i in range(100):
        ds.add(random_obs(rng), np.full(ACTION_DIM, i / 100), 1, (0, 0, i))
    assert len(ds) == 10 and ds.seen == 100
    for k in range(10):
        step = ds.origin[k, 2]
        assert ds.action[k, 0] == pytest.approx(step / 100)
    assert len(set(ds.origin[:10, 2])) == 10


def test_inputs_match_observation_vectors():
    rng = np.random.default_rng(1)
    ds = AggregatedDataset(100)
    obs = [random_obs(rng) for _ in range(5)]
    for o in obs:
        ds.add(o, np.zeros(ACTION_DIM), 1)
    np.testing.assert_array_equal(ds.inputs(np.arange(5)), np.stack([o.vector() for o in obs]))


def test_recorded_inputs_equal_live_observations(train_tasks):
    # the student must see at evaluation time exactly what it was trained on
    cfg, tasks, live = short_cfg(), train_tasks, []
    ds = AggregatedDataset(10000)
    teacher = oracle_teacher(cfg.sim)
    dagger_round(None, teacher, teacher, tasks[:1], 1.0, ds, 0, cfg)
    run_dual_episode(tasks[0], teacher, teacher, cfg, 0,
                     on_step=lambda s, lc, m, a: live.append(build_student_observation(s, lc, tasks[0]).vector()))
    live = np.stack(live)
    assert (live[:, :768] % 1.0 != 0.0).any()
    np.testing.assert_array_equal(ds.inputs(np.arange(len(ds))), live)


def test_overfit_one_record():
    rng = np.random.default_rng(2)
    ds = AggregatedDataset(10)
    target = rng.uniform(-0.8, 0.8, ACTION_DIM)
    obs = random_obs(rng)
    ds.add(obs, target, 1)
    student = make_policy(STUDENT_DIM, (32,), np.random.default_rng(0))
    student, curve = train_student(student, ds, 600, 1e-3)
    assert np.max(np.abs(student_action(student, obs) - target)) <= 1e-3
    assert curve[-1] < curve[0]


def test_zero_lr_leaves_student_unchanged():
    rng = np.random.default_rng(3)
    ds = AggregatedDataset(10)
    ds.add(random_obs(rng), np.zeros(ACTION_DIM), 1)
    student = make_policy(STUDENT_DIM, (8,), np.random.default_rng(0))
    before = [a.tobytes() for a in student.arrays()]
    train_student(student, ds, 3, 0.0)
    assert [a.tobytes() for a in student.arrays()] == before


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        train_student(make_policy(STUDENT_DIM, (4,), np.random.default_rng(0)), AggregatedDataset(5), 1, 1e-3)


def test_student_loss_gradient():
    rng = np.random.default_rng(4)
    ds = AggregatedDataset(50)
    for _ in range(6):
        ds.add(random_obs(rng), rng.uniform(-0.9, 0.9, ACTION_DIM), 1)
    x = ds.inputs(np.arange(6))
    y = ds.action[:6]
    for trial in range(100):
        student = make_policy(STUDENT_DIM, (4,), np.random.default_rng(trial), dtype=np.float64)
        assert bc_loss_grads(student, x, y) == pytest.approx(student_loss(student, ds, np.arange(6)), abs=1e-12)
        grads = [g.copy() for g in student.trunk.grads()]
        arrays = student.trunk.arrays()
        k = int(rng.integers(len(arrays)))
        idx = tuple(int(rng.integers(n)) for n in arrays[k].shape)
        if k == 0:  # most first-layer inputs are zero; pick a live one
            live = np.nonzero(x.any(axis=0))[0]
            idx = (int(rng.choice(live)), idx[1])
        old = arrays[k][idx]
        arrays[k][idx] = old + 1e-6
        lp = student_loss(student, ds, np.arange(6))
        arrays[k][idx] = old - 1e-6
        lm = student_loss(student, ds, np.arange(6))
        arrays[k][idx] = old
        fd = (lp - lm) / 2e-6
        assert abs(grads[k][idx] - fd) <= max(1e-6, 1e-4 * max(abs(fd), abs(grads[k][idx])))


def test_student_checkpoint_round_trip(tmp_path):
    student = make_student(np.random.default_rng(0), Config())
    path = str(tmp_path / "s.ckpt")
    save_student(student, path)
    back = load_student(path)
    x = np.random.default_rng(1).normal(size=STUDENT_DIM)
    assert np.array_equal(mlp.forward(student.trunk, x), mlp.forward(back.trunk, x))
