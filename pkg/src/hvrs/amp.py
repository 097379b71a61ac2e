"""Adversarial style reward: transition features, discriminator and reference data."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import AmpConfig, RewardConfig, SimConfig
from .nn import mlp
from .nn.policy import command_to_action
from .sim.state import ACTION_DIM, SimState, to_agent_frame

# per-state style features: root velocity (agent frame, 2), both hands (agent frame, 6),
# standing, carrying, carried-object lift above its resting height
STYLE_STATE_DIM = 11
PAIR_DIM = 2 * STYLE_STATE_DIM + ACTION_DIM


def style_features(state: SimState) -> np.ndarray:
    a = state.agent
    r = a.root
    c, s = math.cos(r.yaw), math.sin(r.yaw)
    vx, vy = a.root_vel
    out = [c * vx + s * vy, -s * vx + c * vy]
    for h in (a.hand_left, a.hand_right):
        hx, hy = to_agent_frame(r, h[0], h[1])
        out.extend((hx, hy, h[2] - r.z))
    out.append(1.0 if a.standing else 0.0)
    if a.carrying is None:
        out.extend((0.0, 0.0))
    else:
        o = state.object_by_id(a.carrying)
        out.extend((1.0, o.pose.z - o.z_init))
    return np.asarray(out)


@dataclass(frozen=True)
class TransitionPair:
    s_t: np.ndarray
    s_t1: np.ndarray
    a_t: np.ndarray

    def vector(self) -> np.ndarray:
        return pair_vector(self.s_t, self.s_t1, self.a_t)


def pair_vector(s_t, s_t1, a_t) -> np.ndarray:
    v = np.concatenate([np.asarray(s_t, float), np.asarray(s_t1, float), np.asarray(a_t, float)], axis=-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite transition features")
    return v


def make_discriminator(rng, cfg: AmpConfig | None = None, dtype=np.float32) -> mlp.MlpParams:
    cfg = cfg or AmpConfig()
    return mlp.init_mlp((PAIR_DIM, *cfg.hidden, 1), rng, dtype=dtype)


def _as_batch(params, x) -> np.ndarray:
    if isinstance(x, TransitionPair):
        x = x.vector()
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.sizes[0]:
        raise ValueError(f"transition has {x.shape[-1]} features, discriminator expects {params.sizes[0]}")
    return x


def discriminator_logits(params: mlp.MlpParams, x, clip: float = 10.0) -> np.ndarray:
    x = _as_batch(params, x)
    return np.clip(mlp.forward(params, x)[..., 0], -clip, clip)


def discriminator_forward(params: mlp.MlpParams, pair, clip: float = 10.0):
    """Probability that ``pair`` came from the reference data (scalar or batch)."""
    logit = discriminator_logits(params, pair, clip)
    d = 1.0 / (1.0 + np.exp(-logit))
    return float(d) if np.ndim(d) == 0 else d


def discriminator_input_grad(params: mlp.MlpParams, pair, clip: float = 10.0) -> np.ndarray:
    """dD/dx for one pair (zero where the logit is clipped)."""
    x = _as_batch(params, pair)
    out, acts = mlp.forward_cached(params, x)
    logit = out[:, 0]
    d = 1.0 / (1.0 + np.exp(-np.clip(logit, -clip, clip)))
    g = (d * (1.0 - d) * (np.abs(logit) < clip))[:, None]
    scratch = params.copy()
    return mlp.backward(scratch, acts, g)[0]


def style_reward(d, cfg: RewardConfig | None = None, eps: float = 1e-4):
    cfg = cfg or RewardConfig()
    return cfg.lambda_amp * -np.log(np.maximum(1.0 - np.asarray(d, dtype=np.float64), eps))


def discriminator_loss_and_grads(params: mlp.MlpParams, ref_x, pol_x, clip: float = 10.0) -> float:
    """Binary cross-entropy (reference = 1, policy = 0), averaged per side.

    Fills ``params`` gradient buffers and returns the loss.
    """
    ref_x = _as_batch(params, ref_x)
    pol_x = _as_batch(params, pol_x)
    if len(ref_x) == 0 or len(pol_x) == 0:
        raise ValueError("empty discriminator batch")
    x = np.vstack([ref_x, pol_x])
    n_ref, n_pol = len(ref_x), len(pol_x)
    out, acts = mlp.forward_cached(params, x)
    raw = out[:, 0]
    logit = np.clip(raw, -clip, clip)
    label = np.concatenate([np.ones(n_ref), np.zeros(n_pol)])
    weight = np.concatenate([np.full(n_ref, 0.5 / n_ref), np.full(n_pol, 0.5 / n_pol)])
    # softplus(-l) for label 1, softplus(l) for label 0
    loss_each = np.logaddexp(0.0, np.where(label > 0, -logit, logit))
    loss = float((weight * loss_each).sum())
    sig = 1.0 / (1.0 + np.exp(-logit))
    g = weight * (sig - label) * (np.abs(raw) < clip)
    mlp.backward(params, acts, g[:, None])
    return loss


def train_discriminator_step(params: mlp.MlpParams, ref_batch, policy_batch, lr: float,
                             opt: mlp.Adam | None = None, clip: float = 10.0):
    """One gradient step; plain SGD on a copy unless an Adam optimizer owning ``params`` is given."""
    if opt is None:
        params = params.copy()
    loss = discriminator_loss_and_grads(params, ref_batch, policy_batch, clip)
    if opt is None:
        if lr != 0.0:
            for a, g in zip(params.arrays(), params.grads()):
                a[...] = a.astype(np.float64) - lr * g
    else:
        opt.lr = lr
        opt.step(params.grads())
    return params, loss


class ReferenceBuffer:
    """Ring buffer of reference transitions with their source (episode, step)."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be nonnegative")
        self.capacity = capacity
        self.data = np.zeros((capacity, PAIR_DIM))
        self.episode = np.zeros(capacity, dtype=np.int64)
        self.step = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, vector, episode: int = 0, step: int = 0) -> None:
        if self.capacity == 0:
            return
        self.data[self.head] = vector
        self.episode[self.head] = episode
        self.step[self.head] = step
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty reference buffer")
        return self.data[rng.integers(0, self.size, size=n)]


def collect_reference(oracle_policy, tasks, n_transitions: int, seed: int,
                      sim_cfg: SimConfig | None = None, horizon: int = 900) -> ReferenceBuffer:
    """Fill a buffer with transitions from successful scripted-oracle episodes.

    ``tasks`` are SingleTask records; episodes cycle through them in a
    seed-dependent order until ``n_transitions`` pairs are stored.
    """
    from .sim.engine import step
    from .tasks.episodes import episode_done, start_single

    sim_cfg = sim_cfg or SimConfig()
    buf = ReferenceBuffer(n_transitions)
    if n_transitions == 0:
        return buf
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks for reference collection")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(tasks))
    episode = 0
    failures = 0
    k = 0
    while len(buf) < n_transitions:
        single = tasks[order[k % len(tasks)]]
        k += 1
        state = start_single(single, seed=int(rng.integers(2 ** 31)), cfg=sim_cfg)
        goal = state.goals[single.sub_task_index]
        pairs = []
        s_prev = style_features(state)
        ok = False
        for t in range(horizon):
            cmd = oracle_policy(state, goal)
            state, _ = step(state, cmd, cfg=sim_cfg)
            s_next = style_features(state)
            pairs.append((pair_vector(s_prev, s_next, command_to_action(cmd, sim_cfg, limit=1.0)), t))
            s_prev = s_next
            if episode_done(state, goal, sim_cfg):
                ok = True
                break
        if ok:
            for vec, t in pairs[: n_transitions - len(buf)]:
                buf.add(vec, episode, t)
            episode += 1
        else:
            failures += 1
            if episode == 0 and failures >= len(tasks):
                raise RuntimeError("no reference motion: the oracle failed every task")
    return buf
