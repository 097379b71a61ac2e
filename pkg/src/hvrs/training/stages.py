"""Teacher curriculum: single-object pretraining, release/step-back
fine-tuning and the second teacher trained from the first one's end states."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .. import amp
from ..config import Config
from ..distill.lifecycle import LifecycleState, SwitchThresholds, advance
from ..nn import mlp
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.oracle import scripted_oracle
from ..nn.policy import GaussianPolicy, action_to_command, command_to_action, make_policy, mean_action
from ..sim.engine import reset, step
from ..sim.sensors import FEATURE_DIM, distances, privileged_features
from ..tasks.episodes import episode_done, start_single
from .ppo import TrainingDiverged, bc_loss_grads, update_policy
from .rollout import StartPool, collect_rollouts

log = logging.getLogger(__name__)


class StagePreconditionError(RuntimeError):
    pass


@dataclass
class Teacher:
    """A policy with its value function, style discriminator and optimizer state."""
    policy: GaussianPolicy
    value: mlp.MlpParams
    disc: mlp.MlpParams
    opt_pi: mlp.Adam
    opt_v: mlp.Adam
    opt_d: mlp.Adam
    epoch: int = 0
    stage: int = 1

    @classmethod
    def fresh(cls, rng, cfg: Config, stage: int = 1) -> "Teacher":
        scfg = cfg.stages.stage(stage)
        policy = make_policy(FEATURE_DIM, cfg.stages.teacher_hidden, rng, scfg.init_log_std)
        value = mlp.init_mlp((FEATURE_DIM, *cfg.stages.teacher_hidden, 1), rng)
        disc = amp.make_discriminator(rng, cfg.amp)
        return cls.wrap(policy, value, disc, cfg, stage)

    @classmethod
    def wrap(cls, policy, value, disc, cfg: Config, stage: int, epoch: int = 0) -> "Teacher":
        lr = cfg.stages.stage(stage).lr
        return cls(policy, value, disc, mlp.Adam(policy.arrays(), lr), mlp.Adam(value.arrays(), lr),
                   mlp.Adam(disc.arrays(), cfg.amp.lr), epoch, stage)

    def entries(self) -> dict:
        out = {}
        out.update(self.policy.entries("policy"))
        out.update(mlp.mlp_entries(self.value, "value"))
        out.update(mlp.mlp_entries(self.disc, "disc"))
        out.update(self.opt_pi.state("opt_pi"))
        out.update(self.opt_v.state("opt_v"))
        out.update(self.opt_d.state("opt_d"))
        out["meta.epoch"] = np.array([self.epoch], dtype=np.float64)
        out["meta.stage"] = np.array([self.stage], dtype=np.float64)
        return out

    def save(self, path: str) -> None:
        save_checkpoint(self.entries(), path)

    @classmethod
    def from_entries(cls, entries: dict, cfg: Config, stage: int | None = None, with_optim: bool = True,
                     carry_moments: bool = False) -> "Teacher":
        """Rebuild a teacher; ``carry_moments`` keeps the Adam moments when switching stage."""
        policy = GaussianPolicy.from_entries(entries, "policy")
        if policy.obs_dim != FEATURE_DIM:
            raise ValueError(f"checkpoint policy expects {policy.obs_dim} features, simulator provides {FEATURE_DIM}")
        value = mlp.mlp_from_entries(entries, "value")
        disc = mlp.mlp_from_entries(entries, "disc")
        saved_stage = int(entries["meta.stage"][0])
        t = cls.wrap(policy, value, disc, cfg, stage or saved_stage)
        if with_optim and (stage is None or stage == saved_stage):
            t.opt_pi.load_state("opt_pi", entries)
            t.opt_v.load_state("opt_v", entries)
            t.opt_d.load_state("opt_d", entries)
            t.epoch = int(entries["meta.epoch"][0])
        elif carry_moments:
            # a fresh Adam takes lr-sized steps on every weight, which is enough to knock a tuned policy over
            t.opt_pi.load_state("opt_pi", entries)
            t.opt_v.load_state("opt_v", entries)
            t.opt_d.load_state("opt_d", entries)
        return t

    @classmethod
    def load(cls, path: str, cfg: Config, stage: int | None = None, with_optim: bool = True,
             carry_moments: bool = False) -> "Teacher":
        return cls.from_entries(load_checkpoint(path), cfg, stage, with_optim, carry_moments)


def policy_digest(policy: GaussianPolicy) -> str:
    h = hashlib.sha256()
    for a in policy.arrays():
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def policy_controller(policy: GaussianPolicy, sim_cfg):
    """Deterministic (mean-action) controller with the oracle's call signature."""
    def act(state, goal):
        return action_to_command(mean_action(policy, privileged_features(state, goal, sim_cfg)), sim_cfg)
    return act


# ---- start states and demonstrations ------------------------------------

def oracle_rollout(state, goal_index: int, cfg: Config, horizon: int, noise: float = 0.0,
                   rng: np.random.Generator | None = None, tail: int = 10):
    """Scripted-oracle trajectory from ``state``; returns (states, success)."""
    sim_cfg = cfg.sim
    goal = state.goals[goal_index]
    states = [state]
    done_at = None
    for t in range(horizon):
        cmd = scripted_oracle(state, goal, sim_cfg)
        if noise > 0.0:
            a = command_to_action(cmd, sim_cfg, limit=1.0) + noise * rng.standard_normal(11)
            cmd = action_to_command(np.clip(a, -1.0, 1.0), sim_cfg)
        state, _ = step(state, cmd, cfg=sim_cfg)
        states.append(state)
        if done_at is None and episode_done(state, goal, sim_cfg, cfg.rewards):
            done_at = t
        if done_at is not None and t - done_at >= tail:
            break
    return states, done_at is not None


def demonstration_pool(singles, cfg: Config, seed: int, horizon: int = 900):
    """Clean plus noise-perturbed oracle trajectories for every single task."""
    sc = cfg.stages
    trajs, goal_idx, clean = [], [], []
    for i, single in enumerate(singles):
        for k in range(max(1, sc.pretrain_rollouts)):
            rng = np.random.default_rng([seed, i, k, 17])
            s0 = start_single(single, seed=seed, cfg=cfg.sim)
            states, ok = oracle_rollout(s0, single.sub_task_index, cfg, horizon,
                                        noise=0.0 if k == 0 else sc.pretrain_noise, rng=rng)
            trajs.append(states)
            goal_idx.append(single.sub_task_index)
            clean.append(k == 0)
    return trajs, goal_idx, clean


def bc_dataset(trajs, goal_idx, cfg: Config):
    obs, labels = [], []
    for states, gi in zip(trajs, goal_idx):
        for s in states[:-1]:
            g = s.goals[gi]
            obs.append(privileged_features(s, g, cfg.sim))
            labels.append(command_to_action(scripted_oracle(s, g, cfg.sim), cfg.sim))
    return np.asarray(obs), np.asarray(labels)


def pretrain_bc(policy: GaussianPolicy, obs, labels, epochs: int, lr: float, batch: int, seed: int) -> list:
    """Warm-start the policy mean on oracle actions; returns per-epoch losses."""
    opt = mlp.Adam(policy.trunk.arrays(), lr)
    rng = np.random.default_rng([seed, 23])
    n = len(obs)
    curve = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            losses.append(bc_loss_grads(policy, obs[idx], labels[idx]))
            mlp.clip_grads(policy.trunk.grads(), 1.0)
            opt.step(policy.trunk.grads())
        curve.append(float(np.mean(losses)))
    return curve


def pretrain_dagger(policy: GaussianPolicy, singles, obs, labels, cfg: Config, seed: int, horizon: int = 900):
    """Aggregate oracle labels on states the policy itself visits, then refit.

    The first round executes the oracle's action half of the time so the
    policy is not thrown far off the demonstrations at once.
    """
    sc = cfg.stages
    sim_cfg = cfg.sim
    obs, labels = list(obs), list(labels)
    history = []
    for r in range(sc.pretrain_dagger_rounds):
        beta = 0.5 if r == 0 else 0.0
        rng = np.random.default_rng([seed, r, 41])
        ok = 0
        for single in singles:
            s = start_single(single, seed=seed, cfg=sim_cfg)
            goal = s.goals[single.sub_task_index]
            for _ in range(horizon):
                f = privileged_features(s, goal, sim_cfg)
                cmd = scripted_oracle(s, goal, sim_cfg)
                obs.append(f)
                labels.append(command_to_action(cmd, sim_cfg))
                if rng.uniform() >= beta:
                    cmd = action_to_command(mean_action(policy, f), sim_cfg)
                s, _ = step(s, cmd, cfg=sim_cfg)
                if episode_done(s, goal, sim_cfg, cfg.rewards):
                    ok += 1
                    break
        curve = pretrain_bc(policy, np.asarray(obs), np.asarray(labels), sc.pretrain_dagger_epochs,
                            sc.pretrain_bc_lr, 256, seed + r + 1)
        history.append({"round": r, "beta": beta, "episodes_done": ok, "records": len(obs), "bc_loss": curve[-1]})
    return history


def near_placement_pool(singles, cfg: Config, seed: int, per_task: int, horizon: int = 900) -> StartPool:
    """States where the oracle holds the object within the placement threshold."""
    thresh = cfg.rewards.thresh_object2goal
    trajs, goal_idx = [], []
    for single in singles:
        s0 = start_single(single, seed=seed, cfg=cfg.sim)
        states, ok = oracle_rollout(s0, single.sub_task_index, cfg, horizon)
        if not ok:
            continue
        gi = single.sub_task_index
        goal = s0.goals[gi]
        idx = [i for i, s in enumerate(states)
               if s.agent.carrying == goal.object_id and distances(s, goal, cfg.sim).d_object2goal < thresh]
        if not idx:
            continue
        picks = np.linspace(0, len(idx) - 1, per_task).round().astype(int)
        for p in sorted(set(picks.tolist())):
            trajs.append([states[idx[p]]])
            goal_idx.append(gi)
    return StartPool(trajs, goal_idx, p_first=1.0)


def model1_end_state(task, controller, cfg: Config, horizon: int, seed: int):
    """Run model 1 on the first sub-task until the second instruction fires.

    Returns the state at the switch, or None if it never fires.
    """
    th = SwitchThresholds.from_config(cfg.dagger)
    state = reset(task, 0, seed, None, cfg.sim)
    lc = LifecycleState(thresholds=th)
    for _ in range(horizon):
        state, _ = step(state, controller(state, state.goals[0]), cfg=cfg.sim)
        lc, m = advance(state, lc, state.step_count)
        if m == 2:
            return state
    return None


def _sampled_controller(policy, sim_cfg, rng):
    def act(state, goal):
        mu = mlp.forward(policy.trunk, privileged_features(state, goal, sim_cfg))
        u = mu + np.exp(policy.log_std.astype(np.float64)) * rng.standard_normal(mu.shape)
        return action_to_command(np.tanh(u), sim_cfg)
    return act


def model1_end_pool(tasks, model1: GaussianPolicy, cfg: Config, seed: int, per_task: int,
                    horizon: int = 900):
    """Model-1 end states (first rollout per task deterministic, others sampled)."""
    ends, attempts = [], 0
    for i, task in enumerate(tasks):
        for k in range(max(1, per_task)):
            attempts += 1
            if k == 0:
                ctrl = policy_controller(model1, cfg.sim)
            else:
                ctrl = _sampled_controller(model1, cfg.sim, np.random.default_rng([seed, i, k, 31]))
            s = model1_end_state(task, ctrl, cfg, horizon, seed)
            if s is not None:
                ends.append((task, s))
    return ends, attempts


# ---- training loop ---------------------------------------------------------

def _append_jsonl(path: str | None, record: dict) -> None:
    if path:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _trim_log(path: str | None, keep_epochs: int) -> None:
    if not path or not os.path.exists(path):
        return
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and json.loads(ln).get("epoch", 0) < keep_epochs]
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def train_stage(teacher: Teacher, pool: StartPool, stage: int, cfg: Config, seed: int,
                ref: amp.ReferenceBuffer | None, ckpt_path: str | None, log_path: str | None,
                epochs: int | None = None, rehearsal=None) -> Teacher:
    """Alternate rollouts, policy updates and discriminator updates."""
    scfg = cfg.stages.stage(stage)
    total = scfg.epochs if epochs is None else epochs
    _trim_log(log_path, teacher.epoch)
    every = max(1, cfg.stages.checkpoint_every)
    for epoch in range(teacher.epoch, total):
        last_good = teacher.entries()
        batch = collect_rollouts(teacher.policy, teacher.value, pool, scfg, teacher.disc, seed, epoch, cfg)
        try:
            stats = update_policy(teacher.policy, teacher.value, batch, scfg, teacher.opt_pi, teacher.opt_v,
                                  np.random.default_rng([seed, epoch, 1009]), rehearsal)
        except TrainingDiverged:
            if ckpt_path:
                save_checkpoint(last_good, ckpt_path)
            raise
        disc_losses = []
        if ref is not None and len(ref) and cfg.amp.steps_per_epoch > 0:
            rng_d = np.random.default_rng([seed, epoch, 2003])
            pol = batch.pairs.reshape(-1, amp.PAIR_DIM)
            for _ in range(cfg.amp.steps_per_epoch):
                ref_b = ref.sample(cfg.amp.batch_size, rng_d)
                pol_b = pol[rng_d.integers(0, len(pol), size=cfg.amp.batch_size)]
                _, loss = amp.train_discriminator_step(teacher.disc, ref_b, pol_b, cfg.amp.lr, teacher.opt_d,
                                                       cfg.amp.logit_clip)
                disc_losses.append(loss)
        n_end = int(batch.ends.sum())
        record = {"stage": stage, "epoch": epoch, **stats,
                  "disc_loss": float(np.mean(disc_losses)) if disc_losses else None,
                  "episodes_ended": n_end, "successes": int(batch.successes.sum()),
                  "knocked": int(batch.knocked.sum())}
        if batch.reward_mode != "stage2":
            record["term_means"] = [float(v) for v in np.nanmean(batch.terms.reshape(-1, 8), axis=0)]
        _append_jsonl(log_path, record)
        teacher.epoch = epoch + 1
        if ckpt_path and (teacher.epoch % every == 0 or teacher.epoch == total):
            teacher.save(ckpt_path)
    if ckpt_path and teacher.epoch == total and total == 0:
        teacher.save(ckpt_path)
    return teacher


def _resume_or(ckpt_path, resume, cfg, stage, make):
    if resume and ckpt_path and os.path.exists(ckpt_path):
        t = Teacher.load(ckpt_path, cfg)
        if t.stage == stage:
            return t
    return make()


def run_stage1(singles, cfg: Config, seed: int, out_dir: str, resume: bool = False) -> str:
    """Single-object pretraining; returns the checkpoint path."""
    if not singles:
        raise ValueError("empty single-task pool")
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "stage1.ckpt")
    log_path = os.path.join(out_dir, "stage1.jsonl")
    sc = cfg.stages
    trajs, goal_idx, _ = demonstration_pool(singles, cfg, seed)
    pool = StartPool(trajs, goal_idx, p_first=sc.start_at_beginning)
    ref = amp.collect_reference(lambda s, g: scripted_oracle(s, g, cfg.sim), singles,
                                cfg.amp.reference_transitions, seed, cfg.sim)

    def make():
        rng = np.random.default_rng([seed, 1])
        t = Teacher.fresh(rng, cfg, stage=1)
        obs, labels = bc_dataset(trajs, goal_idx, cfg)
        curve = pretrain_bc(t.policy, obs, labels, sc.pretrain_bc_epochs, sc.pretrain_bc_lr, 256, seed)
        rounds = pretrain_dagger(t.policy, singles, obs, labels, cfg, seed)
        _trim_log(log_path, -1)
        _append_jsonl(log_path, {"stage": 1, "epoch": -1, "bc_pretrain_loss": curve, "dagger_rounds": rounds})
        return t

    teacher = _resume_or(ckpt, resume, cfg, 1, make)
    train_stage(teacher, pool, 1, cfg, seed, ref, ckpt, log_path)
    return ckpt


def run_stage2(stage1_ckpt: str, singles, cfg: Config, seed: int, out_dir: str, resume: bool = False) -> str:
    """Release and step-back fine-tuning from near-placement states."""
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "stage2.ckpt")
    log_path = os.path.join(out_dir, "stage2.jsonl")
    pool = near_placement_pool(singles, cfg, seed, cfg.stages.stage2_pool_per_task)
    if len(pool) == 0:
        raise StagePreconditionError("no near-placement states for stage 2")
    ref = amp.collect_reference(lambda s, g: scripted_oracle(s, g, cfg.sim), singles,
                                cfg.amp.reference_transitions, seed, cfg.sim)

    rehearsal = None
    if cfg.stages.stage(2).rehearsal_coef > 0:
        trajs, goal_idx, _ = demonstration_pool(singles, cfg, seed)
        rehearsal = bc_dataset(trajs, goal_idx, cfg)

    def make():
        t = Teacher.load(stage1_ckpt, cfg, stage=2, with_optim=False, carry_moments=True)
        # fine-tuning explores less: hand jitter at the moment of release sends the object sliding
        np.minimum(t.policy.log_std, cfg.stages.stage(2).init_log_std, out=t.policy.log_std)
        _trim_log(log_path, -1)
        return t

    teacher = _resume_or(ckpt, resume, cfg, 2, make)
    train_stage(teacher, pool, 2, cfg, seed, ref, ckpt, log_path, rehearsal=rehearsal)
    return ckpt


def run_stage3(stage2_ckpt: str, stage1_ckpt: str, tasks, cfg: Config, seed: int, out_dir: str,
               resume: bool = False) -> str:
    """Second teacher, started from the stage-1 weights, trained on the states
    model 1 leaves behind after placing and stepping back. Model 1 is frozen."""
    from ..tasks.dataset import SingleTask

    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "stage3.ckpt")
    log_path = os.path.join(out_dir, "stage3.jsonl")
    model1 = Teacher.load(stage2_ckpt, cfg, with_optim=False).policy
    digest_before = policy_digest(model1)
    sc = cfg.stages
    ends, attempts = model1_end_pool(tasks, model1, cfg, seed, sc.stage3_pool_per_task)
    fail_rate = 1.0 - len(ends) / max(1, attempts)
    if fail_rate > 0.5:
        raise StagePreconditionError(f"stage-3 precondition unmet: model 1 failed {fail_rate:.0%} of rollouts")
    bent = sum(1 for _, s in ends if not s.agent.standing) / len(ends)
    trajs, goal_idx = [], []
    for k, (task, s) in enumerate(ends):
        states, _ = oracle_rollout(s, 1, cfg, cfg.stages.stage(3).horizon)
        trajs.append(states)
        goal_idx.append(1)
    pool = StartPool(trajs, goal_idx, p_first=sc.start_at_beginning)
    rehearsal = bc_dataset(trajs, goal_idx, cfg) if sc.stage(3).rehearsal_coef > 0 else None
    singles = [SingleTask(t, 1, None) for t in tasks]
    ref = amp.collect_reference(lambda s, g: scripted_oracle(s, g, cfg.sim), singles,
                                cfg.amp.reference_transitions, seed, cfg.sim)

    def make():
        t = Teacher.load(stage1_ckpt, cfg, stage=3, with_optim=False, carry_moments=True)
        np.minimum(t.policy.log_std, sc.stage(3).init_log_std, out=t.policy.log_std)
        _trim_log(log_path, -1)
        _append_jsonl(log_path, {"stage": 3, "epoch": -1, "model1_rollouts": attempts, "model1_successes": len(ends),
                                 "bent_start_fraction": bent})
        return t

    teacher = _resume_or(ckpt, resume, cfg, 3, make)
    train_stage(teacher, pool, 3, cfg, seed, ref, ckpt, log_path, rehearsal=rehearsal)
    if policy_digest(model1) != digest_before:
        raise AssertionError("model 1 changed during stage 3")
    return ckpt


def evaluate_stage2(policy: GaussianPolicy, pool: StartPool, cfg: Config, horizon: int = 150) -> dict:
    """Deterministic episodes from near-placement states: final clearances and
    how far the object moved between its release and the episode end."""
    ctrl = policy_controller(policy, cfg.sim)
    d_ro, d_ho, disturb, placed = [], [], [], []
    for traj, gi in zip(pool.trajectories, pool.goal_index):
        s = traj[0]
        goal = s.goals[gi]
        release_pos = None
        for _ in range(horizon):
            s, ev = step(s, ctrl(s, goal), cfg=cfg.sim)
            o = s.object_by_id(goal.object_id)
            if s.agent.carrying == goal.object_id:
                release_pos = None
            elif release_pos is None:
                release_pos = (o.pose.x, o.pose.y)
        ctx = distances(s, goal, cfg.sim)
        o = s.object_by_id(goal.object_id)
        d_ro.append(ctx.d_robot2object)
        d_ho.append(ctx.d_hand2object)
        placed.append(ctx.d_object2goal < goal.success_radius and s.agent.carrying is None)
        if release_pos is not None:
            disturb.append(math.hypot(o.pose.x - release_pos[0], o.pose.y - release_pos[1]))
    return {
        "episodes": len(d_ro),
        "mean_d_robot2object": float(np.mean(d_ro)),
        "mean_d_hand2object": float(np.mean(d_ho)),
        "mean_disturbance": float(np.mean(disturb)) if disturb else float("nan"),
        "max_disturbance": float(np.max(disturb)) if disturb else float("nan"),
        "released_fraction": len(disturb) / max(1, len(d_ro)),
        "placed_fraction": float(np.mean(placed)),
    }
