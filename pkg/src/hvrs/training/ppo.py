"""Clipped-surrogate policy optimisation with GAE and an action-prior term."""
from __future__ import annotations

import math

import numpy as np

from ..nn import mlp
from ..nn.policy import GaussianPolicy, log1m_tanh2


class TrainingDiverged(RuntimeError):
    def __init__(self, stats: dict):
        super().__init__(f"training diverged: {stats}")
        self.stats = stats


def compute_gae(rewards, values, next_values, ends, gamma: float, lam: float):
    """Advantages and returns for one env (1-D arrays over time).

    ``ends[t]`` marks the last step of an episode; ``next_values[t]`` is the
    value of the state reached by step t (0 for a true terminal).
    """
    T = len(rewards)
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] - values[t]
        last = delta + gamma * lam * (0.0 if ends[t] else 1.0) * last
        adv[t] = last
    return adv, adv + np.asarray(values)


def batch_gae(batch, gamma: float, lam: float):
    E = batch.rewards.shape[0]
    adv = np.zeros_like(batch.rewards)
    ret = np.zeros_like(batch.rewards)
    for e in range(E):
        # the rollout window cuts every env's last episode; treat that as an end too
        ends = batch.ends[e].copy()
        ends[-1] = True
        adv[e], ret[e] = compute_gae(batch.rewards[e], batch.values[e], batch.next_values[e], ends, gamma, lam)
    return adv, ret


def policy_loss_grads(policy: GaussianPolicy, obs, u, old_logp, adv, labels, clip: float,
                      bc_coef: float, entropy_coef: float = 0.0):
    """Loss and gradients (written into ``policy``'s buffers) for one minibatch.

    loss = -mean(min(r A, clip(r) A)) + bc_coef * mean((tanh(mu) - label)^2)
           - entropy_coef * sum(log_std)
    """
    n, A = u.shape
    out, acts = mlp.forward_cached(policy.trunk, obs)
    mu = out
    log_std = policy.log_std.astype(np.float64)
    inv_var = np.exp(-2.0 * log_std)
    z = (u - mu) * np.sqrt(inv_var)
    lp_gauss = (-0.5 * z * z - log_std - 0.5 * math.log(2 * math.pi)).sum(axis=1)
    logp = lp_gauss - log1m_tanh2(u).sum(axis=1)
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr = np.minimum(ratio * adv, clipped * adv)
    active = (ratio * adv <= clipped * adv)
    # d(-mean surr)/d logp
    g_logp = -(ratio * adv * active) / n
    g_mu = g_logp[:, None] * (u - mu) * inv_var
    g_log_std = (g_logp[:, None] * (z * z - 1.0)).sum(axis=0)

    th = np.tanh(mu)
    diff = th - labels
    bc = float((diff * diff).mean()) if bc_coef else 0.0
    if bc_coef:
        g_mu = g_mu + bc_coef * 2.0 * diff * (1.0 - th * th) / (n * A)
    g_log_std = g_log_std - entropy_coef
    mlp.backward(policy.trunk, acts, g_mu)
    policy.grad_log_std[...] = g_log_std
    loss = float(-surr.mean()) + bc_coef * bc - entropy_coef * float(log_std.sum())
    clip_frac = float((np.abs(ratio - 1.0) > clip).mean())
    approx_kl = float((old_logp - logp).mean())
    return loss, {"surrogate": float(-surr.mean()), "bc": bc, "clip_frac": clip_frac, "approx_kl": approx_kl}


def value_loss_grads(value: mlp.MlpParams, obs, returns, coef: float = 0.5) -> float:
    out, acts = mlp.forward_cached(value, obs)
    diff = out[:, 0] - returns
    mlp.backward(value, acts, (coef * 2.0 * diff / len(diff))[:, None])
    return float(coef * (diff * diff).mean())


def update_policy(policy: GaussianPolicy, value: mlp.MlpParams, batch, stage_cfg, opt_pi: mlp.Adam,
                  opt_v: mlp.Adam, rng: np.random.Generator, rehearsal=None) -> dict:
    """One pass (``ppo_epochs`` sweeps) of minibatch updates over ``batch``.

    ``rehearsal`` is an optional (obs, labels) pair; each minibatch then also
    imitates an equally sized random slice of it, weighted by
    ``stage_cfg.rehearsal_coef``. Parameters are updated in place; returns
    statistics.
    """
    use_rehearsal = rehearsal is not None and stage_cfg.rehearsal_coef > 0 and len(rehearsal[0]) > 0
    if batch.n_transitions == 0:
        raise ValueError("empty rollout batch")
    adv, ret = batch_gae(batch, stage_cfg.gamma, stage_cfg.gae_lambda)
    D = batch.obs.shape[-1]
    obs = batch.obs.reshape(-1, D)
    u = batch.u.reshape(len(obs), -1)
    old_logp = batch.logp.reshape(-1)
    adv = adv.reshape(-1)
    ret = ret.reshape(-1)
    labels = batch.labels.reshape(len(obs), -1)
    adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
    opt_pi.lr = stage_cfg.lr
    opt_v.lr = stage_cfg.lr
    n = len(obs)
    mb = min(stage_cfg.minibatch, n)
    agg = {"policy_loss": [], "value_loss": [], "surrogate": [], "bc": [], "clip_frac": [], "approx_kl": [],
           "grad_norm": [], "rehearsal": []}
    for _ in range(stage_cfg.ppo_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            idx = perm[start:start + mb]
            lp, info = policy_loss_grads(policy, obs[idx], u[idx], old_logp[idx], adv_n[idx], labels[idx],
                                         stage_cfg.clip, stage_cfg.bc_coef, stage_cfg.entropy_coef)
            if use_rehearsal:
                saved = [g.copy() for g in policy.grads()]
                pick = rng.integers(0, len(rehearsal[0]), size=len(idx))
                rl = bc_loss_grads(policy, rehearsal[0][pick], rehearsal[1][pick])
                for g, s in zip(policy.grads(), saved):
                    g *= stage_cfg.rehearsal_coef
                    g += s
                lp += stage_cfg.rehearsal_coef * rl
                agg["rehearsal"].append(rl)
            vl = value_loss_grads(value, obs[idx], ret[idx], stage_cfg.value_coef)
            if not (math.isfinite(lp) and math.isfinite(vl)):
                raise TrainingDiverged({"policy_loss": lp, "value_loss": vl, **info})
            gn = mlp.clip_grads(policy.grads(), stage_cfg.max_grad_norm)
            mlp.clip_grads(value.grads(), stage_cfg.max_grad_norm)
            opt_pi.step(policy.grads())
            policy.clamp()
            opt_v.step(value.grads())
            agg["policy_loss"].append(lp)
            agg["value_loss"].append(vl)
            agg["grad_norm"].append(gn)
            for k, v in info.items():
                agg[k].append(v)
    stats = {k: float(np.mean(v)) for k, v in agg.items() if v}
    stats["mean_reward"] = float(batch.rewards.mean())
    stats["mean_task_reward"] = float(batch.task_rewards.mean())
    stats["mean_style_reward"] = float(batch.style_rewards.mean())
    return stats


def bc_loss_grads(policy: GaussianPolicy, obs, labels) -> float:
    """Mean squared error between the squashed mean action and the labels."""
    out, acts = mlp.forward_cached(policy.trunk, obs)
    th = np.tanh(out)
    diff = th - labels
    n, A = diff.shape
    mlp.backward(policy.trunk, acts, 2.0 * diff * (1.0 - th * th) / (n * A))
    policy.grad_log_std[...] = 0.0
    return float((diff * diff).mean())
