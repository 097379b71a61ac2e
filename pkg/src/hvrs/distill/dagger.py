"""Dual-teacher DAgger distillation into an egocentric, instruction-conditioned student."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from ..config import Config
from ..nn import mlp
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.oracle import scripted_oracle
from ..nn.policy import GaussianPolicy, action_to_command, command_to_action, make_policy, mean_action
from ..sim.engine import reset, step
from ..sim.sensors import FEATURE_DIM, PROPRIO_DIM, SUBSAMPLES, egocentric_observation, privileged_features, proprioception
from ..sim.state import ACTION_DIM, GridSpec, SimState
from ..tasks.episodes import episode_done
from ..training.ppo import bc_loss_grads
from .lifecycle import LifecycleState, SwitchThresholds, advance

log = logging.getLogger(__name__)

POOL = 2
N_TOKENS = 16
STUDENT_GRID = GridSpec().cells // POOL
STUDENT_DIM = STUDENT_GRID * STUDENT_GRID * 3 + PROPRIO_DIM + 3 * N_TOKENS
# pooled cells are multiples of 1 / GRID_LEVELS, so the dataset stores them exactly as uint8
GRID_LEVELS = SUBSAMPLES * SUBSAMPLES * POOL * POOL


@dataclass(frozen=True)
class StudentObservation:
    """Everything the student may see. There are no object or goal poses here."""
    grid: np.ndarray        # STUDENT_GRID x STUDENT_GRID x 3, coverage fractions in [0, 1]
    proprio: np.ndarray     # PROPRIO_DIM
    tokens: tuple           # (object, source region, target region) of the active instruction

    def vector(self) -> np.ndarray:
        return student_vector(self.grid, self.proprio, self.tokens)


def student_vector(grid, proprio, tokens) -> np.ndarray:
    onehot = np.zeros(3 * N_TOKENS)
    for k, t in enumerate(tokens):
        if not 0 <= t < N_TOKENS:
            raise ValueError(f"instruction token {t} outside 0..{N_TOKENS - 1}")
        onehot[k * N_TOKENS + t] = 1.0
    return np.concatenate([np.asarray(grid, dtype=np.float64).ravel(), np.asarray(proprio, dtype=np.float64), onehot])


def pooled_grid(state: SimState, grid: GridSpec | None = None) -> np.ndarray:
    g = egocentric_observation(state, grid or GridSpec())
    C = g.shape[0]
    if C % POOL:
        raise ValueError(f"grid size {C} is not divisible by {POOL}")
    return g.reshape(C // POOL, POOL, C // POOL, POOL, 3).mean(axis=(1, 3))


def build_student_observation(state: SimState, lifecycle: LifecycleState, task, grid: GridSpec | None = None
                              ) -> StudentObservation:
    tokens = task.sub_tasks[lifecycle.sub_task_index].instruction.tokens
    return StudentObservation(pooled_grid(state, grid), proprioception(state), tuple(int(t) for t in tokens))


# ---- controllers -------------------------------------------------------------

def teacher_from_policy(policy: GaussianPolicy, sim_cfg):
    if policy.obs_dim != FEATURE_DIM:
        raise ValueError(f"teacher expects {policy.obs_dim} features, simulator provides {FEATURE_DIM}")

    def act(state, goal):
        return mean_action(policy, privileged_features(state, goal, sim_cfg))
    return act


def oracle_teacher(sim_cfg):
    def act(state, goal):
        return command_to_action(scripted_oracle(state, goal, sim_cfg), sim_cfg, limit=1.0)
    return act


def student_action(student: GaussianPolicy, obs: StudentObservation) -> np.ndarray:
    return mean_action(student, obs.vector())


def make_student(rng, cfg: Config) -> GaussianPolicy:
    return make_policy(STUDENT_DIM, cfg.dagger.hidden, rng, init_log_std=-2.0)


def load_teacher_policy(path: str) -> GaussianPolicy:
    entries = load_checkpoint(path)
    if "policy.log_std" not in entries:
        raise ValueError(f"{path}: not a teacher checkpoint")
    return GaussianPolicy.from_entries(entries, "policy")


def save_student(student: GaussianPolicy, path: str) -> None:
    entries = student.entries("student")
    entries["meta.student_dim"] = np.array([STUDENT_DIM], dtype=np.float64)
    save_checkpoint(entries, path)


def load_student(path: str) -> GaussianPolicy:
    entries = load_checkpoint(path)
    if "student.log_std" not in entries:
        raise ValueError(f"{path}: not a student checkpoint")
    student = GaussianPolicy.from_entries(entries, "student")
    if student.obs_dim != STUDENT_DIM:
        raise ValueError(f"student expects {student.obs_dim} inputs, observations have {STUDENT_DIM}")
    return student


# ---- dataset -----------------------------------------------------------------

class AggregatedDataset:
    """Reservoir-capped store of (observation, teacher action, teacher id)."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = np.random.default_rng([seed, 4099])
        self.seen = 0
        self.grid = np.zeros((0, STUDENT_GRID, STUDENT_GRID, 3), dtype=np.uint8)
        self.proprio = np.zeros((0, PROPRIO_DIM))
        self.tokens = np.zeros((0, 3), dtype=np.int64)
        self.action = np.zeros((0, ACTION_DIM))
        self.teacher_id = np.zeros(0, dtype=np.int64)
        # (round, task index, step) for replay audits
        self.origin = np.zeros((0, 3), dtype=np.int64)
        self.holdout = np.zeros(0, dtype=bool)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def _grow(self, need: int) -> None:
        cap = len(self.teacher_id)
        if need <= cap:
            return
        new = min(self.capacity, max(need, 2 * cap, 1024))
        for name in ("grid", "proprio", "tokens", "action", "teacher_id", "origin", "holdout"):
            arr = getattr(self, name)
            grown = np.zeros((new, *arr.shape[1:]), dtype=arr.dtype)
            grown[:cap] = arr
            setattr(self, name, grown)

    def add(self, obs: StudentObservation, action, teacher_id: int, origin=(0, 0, 0), holdout: bool = False) -> None:
        self.seen += 1
        if self._n < self.capacity:
            self._grow(self._n + 1)
            i = self._n
            self._n += 1
        else:
            j = int(self.rng.integers(self.seen))
            if j >= self.capacity:
                return
            i = j
        self.grid[i] = np.rint(np.asarray(obs.grid, dtype=np.float64) * GRID_LEVELS)
        self.proprio[i] = obs.proprio
        self.tokens[i] = obs.tokens
        self.action[i] = action
        self.teacher_id[i] = teacher_id
        self.origin[i] = origin
        self.holdout[i] = holdout

    def inputs(self, idx) -> np.ndarray:
        n = len(idx)
        onehot = np.zeros((n, 3 * N_TOKENS))
        for k in range(3):
            onehot[np.arange(n), k * N_TOKENS + self.tokens[idx, k]] = 1.0
        return np.concatenate([self.grid[idx].reshape(n, -1) / float(GRID_LEVELS), self.proprio[idx], onehot], axis=1)

    def split(self):
        idx = np.arange(self._n)
        h = self.holdout[:self._n]
        return idx[~h], idx[h]


# ---- rounds ------------------------------------------------------------------

def run_dual_episode(task, teacher1, teacher2, cfg: Config, seed: int, chooser=None, on_step=None,
                     cap: int | None = None, thresholds: SwitchThresholds | None = None):
    """Drive one two-object episode under the instruction-switching rule.

    ``chooser(state, lifecycle, teacher_action)`` returns the executed action
    (defaults to the teacher's). ``on_step`` sees every visited state with its
    lifecycle and the supervising teacher's action. Returns (final state,
    steps, lifecycle).
    """
    sim_cfg = cfg.sim
    cap = cap or cfg.eval.episode_cap
    th = thresholds or SwitchThresholds.from_config(cfg.dagger)
    state = reset(task, 0, seed, None, sim_cfg)
    lc = LifecycleState(thresholds=th)
    teachers = (teacher1, teacher2)
    t = 0
    for t in range(cap):
        lc, m = advance(state, lc, state.step_count)
        goal = state.goals[m - 1]
        a_teacher = teachers[m - 1](state, goal) if teachers[m - 1] is not None else None
        if on_step is not None:
            on_step(state, lc, m, a_teacher)
        a = a_teacher if chooser is None else chooser(state, lc, a_teacher)
        state, _ = step(state, action_to_command(a, sim_cfg), cfg=sim_cfg)
        if m == 2 and episode_done(state, state.goals[1], sim_cfg, cfg.rewards):
            return state, t + 1, lc
    return state, t + 1, lc


def dagger_round(student: GaussianPolicy, teacher1, teacher2, tasks, beta: float, dataset: AggregatedDataset,
                 seed: int, cfg: Config, round_index: int = 0):
    """Roll out the beta-mixture and label every visited state with the active teacher."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    every = max(1, cfg.dagger.holdout_every)
    before = len(dataset)
    switched = 0
    done = 0
    steps = 0
    for i, task in enumerate(tasks):
        rng = np.random.default_rng([seed, round_index, i, 7])
        holdout = i % every == every - 1

        def record(state, lc, m, a_teacher, _i=i, _hold=holdout, _task=task):
            obs = build_student_observation(state, lc, _task)
            record.last_obs = obs
            dataset.add(obs, a_teacher, m, (round_index, _i, state.step_count), _hold)

        def choose(state, lc, a_teacher):
            if rng.uniform() < beta:
                return a_teacher
            return student_action(student, record.last_obs)

        final, n, lc = run_dual_episode(task, teacher1, teacher2, cfg, seed, choose, record)
        steps += n
        switched += lc.latched
        done += n < cfg.eval.episode_cap
    stats = {"round": round_index, "beta": beta, "episodes": len(tasks), "steps": steps,
             "switched_fraction": switched / max(1, len(tasks)), "finished_fraction": done / max(1, len(tasks)),
             "dataset_size": len(dataset), "added": len(dataset) - before}
    return dataset, stats


def student_loss(student: GaussianPolicy, dataset: AggregatedDataset, idx, batch: int = 4096) -> float:
    if len(idx) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(idx), batch):
        sl = idx[start:start + batch]
        diff = np.tanh(mlp.forward(student.trunk, dataset.inputs(sl))) - dataset.action[sl]
        total += float((diff * diff).sum())
    return total / (len(idx) * ACTION_DIM)


def train_student(student: GaussianPolicy, dataset: AggregatedDataset, epochs: int, lr: float, seed: int = 0,
                  batch_size: int = 256, opt: mlp.Adam | None = None, idx=None):
    """Regress the squashed mean action onto teacher actions; returns (student, loss curve)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if idx is None:
        idx = np.arange(len(dataset))
    if len(idx) == 0:
        raise ValueError("no training records")
    opt = opt or mlp.Adam(student.trunk.arrays(), lr)
    opt.lr = lr
    rng = np.random.default_rng([seed, 8191])
    curve = []
    for _ in range(epochs):
        perm = rng.permutation(idx)
        losses = []
        for start in range(0, len(perm), batch_size):
            sl = np.sort(perm[start:start + batch_size])
            losses.append(bc_loss_grads(student, dataset.inputs(sl), dataset.action[sl]))
            mlp.clip_grads(student.trunk.grads(), 1.0)
            opt.step(student.trunk.grads())
        curve.append(float(np.mean(losses)))
    return student, curve


def beta_schedule(rounds: int) -> list:
    if rounds <= 0:
        raise ValueError("need at least one round")
    if rounds == 1:
        return [1.0]
    return [1.0 - r / (rounds - 1) for r in range(rounds)]


def run_stage4(teacher1, teacher2, tasks, cfg: Config, seed: int, out_dir: str) -> str:
    """Alternate DAgger rounds and student regression; returns the student checkpoint path.

    ``teacher1``/``teacher2`` are checkpoint paths or ready-made controllers.
    """
    if not tasks:
        raise ValueError("no tasks to distill on")
    t1 = teacher_from_policy(load_teacher_policy(teacher1), cfg.sim) if isinstance(teacher1, str) else teacher1
    t2 = teacher_from_policy(load_teacher_policy(teacher2), cfg.sim) if isinstance(teacher2, str) else teacher2
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "student.ckpt")
    log_path = os.path.join(out_dir, "distill.jsonl")
    dc = cfg.dagger
    student = make_student(np.random.default_rng([seed, 3]), cfg)
    dataset = AggregatedDataset(dc.capacity, seed)
    opt = mlp.Adam(student.trunk.arrays(), dc.lr)
    with open(log_path, "w", encoding="utf-8") as fh:
        for r, beta in enumerate(beta_schedule(dc.rounds)):
            dataset, stats = dagger_round(student, t1, t2, tasks, beta, dataset, seed, cfg, r)
            train_idx, hold_idx = dataset.split()
            student, curve = train_student(student, dataset, dc.train_epochs, dc.lr, seed + r, dc.batch_size,
                                           opt, train_idx)
            stats["train_loss"] = curve[-1] if curve else float("nan")
            stats["holdout_loss"] = student_loss(student, dataset, hold_idx)
            stats["holdout_records"] = int(len(hold_idx))
            fh.write(json.dumps(stats, sort_keys=True) + "\n")
            fh.flush()
            log.info("round %d beta %.2f dataset %d holdout %.4f", r, beta, len(dataset), stats["holdout_loss"])
    save_student(student, path)
    return path
