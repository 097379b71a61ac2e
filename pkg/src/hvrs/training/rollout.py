"""Parallel-environment rollout collection.

Every epoch starts fresh episodes whose randomness is derived from
(seed, epoch, env index), so an epoch can be replayed exactly from a
checkpoint without storing simulator state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import amp
from ..config import Config, StageConfig
from ..nn import mlp
from ..nn.oracle import scripted_oracle
from ..nn.policy import GaussianPolicy, action_to_command, command_to_action, gaussian_log_prob
from ..rewards import stage2_reward, task_reward_terms
from ..sim.engine import SimError, step
from ..sim.sensors import FEATURE_DIM, distances, privileged_features
from ..sim.state import ACTION_DIM
from ..tasks.episodes import episode_done


@dataclass
class StartPool:
    """Episode start states: whole trajectories, sampled at their first state
    with probability ``p_first`` and at a uniformly random state otherwise."""
    trajectories: list
    goal_index: list
    p_first: float = 0.5

    def __len__(self) -> int:
        return len(self.trajectories)

    def sample(self, rng: np.random.Generator):
        k = int(rng.integers(len(self.trajectories)))
        traj = self.trajectories[k]
        if len(traj) == 1 or rng.uniform() < self.p_first:
            i = 0
        else:
            i = int(rng.integers(len(traj)))
        return traj[i], self.goal_index[k], (k, i)


@dataclass
class RolloutBatch:
    obs: np.ndarray          # envs x steps x FEATURE_DIM
    u: np.ndarray            # pre-squash action samples
    logp: np.ndarray
    values: np.ndarray
    next_values: np.ndarray  # value of the successor state (bootstrap at episode ends)
    rewards: np.ndarray      # total = task (or stage2) + style
    task_rewards: np.ndarray
    style_rewards: np.ndarray
    ends: np.ndarray         # the episode ends after this step
    successes: np.ndarray    # the episode ended by placing and stepping back
    knocked: np.ndarray      # the episode ended because the released object was sent sliding
    labels: np.ndarray       # scripted-oracle action at the same state
    pairs: np.ndarray        # style-discriminator transition vectors
    terms: np.ndarray        # envs x steps x 8 (NaN in stage-2 mode)
    d_object2goal: np.ndarray
    reward_mode: str
    starts: list = field(default_factory=list)

    @property
    def n_transitions(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]


def object_knocked(state, goal, speed: float) -> bool:
    """The goal object is loose and sliding faster than ``speed``."""
    o = state.object_by_id(goal.object_id)
    return state.agent.carrying != o.id and math.hypot(o.vel[0], o.vel[1]) > speed


def _batch_obs(states, goals, sim_cfg) -> np.ndarray:
    return np.stack([privileged_features(s, g, sim_cfg) for s, g in zip(states, goals)])


def collect_rollouts(policy: GaussianPolicy, value: mlp.MlpParams, pool: StartPool, stage_cfg: StageConfig,
                     disc: mlp.MlpParams | None, seed: int, epoch: int, cfg: Config,
                     deterministic: bool = False) -> RolloutBatch:
    sim_cfg, rcfg = cfg.sim, cfg.rewards
    if len(pool) == 0:
        raise ValueError("empty start pool")
    E, T = stage_cfg.envs, stage_cfg.steps
    rngs = [np.random.default_rng([seed, epoch, e]) for e in range(E)]
    states, goals, ages, starts = [], [], [], []
    for e in range(E):
        s, gi, tag = pool.sample(rngs[e])
        states.append(s)
        goals.append(s.goals[gi])
        ages.append(0)
        starts.append(tag)

    obs = np.zeros((E, T, FEATURE_DIM))
    u_all = np.zeros((E, T, ACTION_DIM))
    logp = np.zeros((E, T))
    rewards = np.zeros((E, T))
    task_r = np.zeros((E, T))
    style_r = np.zeros((E, T))
    ends = np.zeros((E, T), dtype=bool)
    succ = np.zeros((E, T), dtype=bool)
    knocked = np.zeros((E, T), dtype=bool)
    labels = np.zeros((E, T, ACTION_DIM))
    pairs = np.zeros((E, T, amp.PAIR_DIM))
    terms = np.full((E, T, 8), np.nan)
    d_og = np.zeros((E, T))
    final_obs = {}

    cur = _batch_obs(states, goals, sim_cfg)
    log_std = policy.log_std.astype(np.float64)
    std = np.exp(log_std)
    for t in range(T):
        obs[:, t] = cur
        mu = mlp.forward(policy.trunk, cur)
        noise = np.stack([r.standard_normal(ACTION_DIM) for r in rngs])
        u = mu if deterministic else mu + std * noise
        u_all[:, t] = u
        logp[:, t] = gaussian_log_prob(u, mu, log_std)
        acts = np.tanh(u)
        style_before = [amp.style_features(s) for s in states]
        for e in range(E):
            s, g = states[e], goals[e]
            labels[e, t] = command_to_action(scripted_oracle(s, g, sim_cfg), sim_cfg)
            try:
                nxt, _ = step(s, action_to_command(acts[e], sim_cfg), cfg=sim_cfg)
            except SimError as err:
                raise SimError(f"env {e}: {err}") from None
            pairs[e, t] = amp.pair_vector(style_before[e], amp.style_features(nxt), acts[e])
            ctx = distances(nxt, g, sim_cfg)
            d_og[e, t] = ctx.d_object2goal
            if stage_cfg.reward_mode == "stage2":
                task_r[e, t] = stage2_reward(ctx, rcfg)
            else:
                br = task_reward_terms(ctx, rcfg)
                terms[e, t] = br.terms
                task_r[e, t] = br.task_reward
            states[e] = nxt
            ages[e] += 1
            done = episode_done(nxt, g, sim_cfg, rcfg)
            knocked[e, t] = stage_cfg.knock_speed > 0 and object_knocked(nxt, g, stage_cfg.knock_speed)
            if done:
                task_r[e, t] += stage_cfg.success_bonus
            if done or knocked[e, t] or ages[e] >= stage_cfg.horizon:
                ends[e, t] = True
                succ[e, t] = done
                if t < T - 1 and not knocked[e, t]:
                    final_obs[(e, t)] = privileged_features(nxt, g, sim_cfg)
                    s2, gi, tag = pool.sample(rngs[e])
                    states[e], goals[e], ages[e] = s2, s2.goals[gi], 0
                    starts.append(tag)
        if disc is not None and rcfg.lambda_amp != 0.0:
            d = amp.discriminator_forward(disc, pairs[:, t], cfg.amp.logit_clip)
            style_r[:, t] = amp.style_reward(d, rcfg, cfg.amp.log_eps)
        rewards[:, t] = task_r[:, t] + style_r[:, t]
        cur = _batch_obs(states, goals, sim_cfg)

    # successor values: next row of obs, the stored final obs at episode ends,
    # and the live state after the last step
    values = mlp.forward(value, obs.reshape(E * T, -1))[:, 0].reshape(E, T)
    next_values = np.zeros((E, T))
    next_values[:, :-1] = values[:, 1:]
    next_values[:, -1] = mlp.forward(value, cur)[:, 0]
    if final_obs:
        keys = sorted(final_obs)
        vals = mlp.forward(value, np.stack([final_obs[k] for k in keys]))[:, 0]
        for (e, t), v in zip(keys, vals):
            next_values[e, t] = v
    next_values[knocked] = 0.0
    return RolloutBatch(obs, u_all, logp, values, next_values, rewards, task_r, style_r, ends, succ, knocked,
                        labels, pairs, terms, d_og, stage_cfg.reward_mode, starts)
