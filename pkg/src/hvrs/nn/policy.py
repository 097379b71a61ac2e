"""Tanh-squashed diagonal Gaussian policies and the action mapping.

A normalized action ``a`` in (-1, 1)^11 maps onto an ActionCommand as

    a[0:2]  root velocity (agent frame) / v_max
    a[2]    yaw rate / yaw_rate_max
    a[3:9]  hand offsets / reach_radius
    a[9]    grasp when > 0
    a[10]   lift = (a + 1) / 2
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..config import SimConfig
from ..sim.state import ACTION_DIM, ActionCommand
from . import mlp

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
LABEL_LIMIT = 0.98
_LOG2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianPolicy:
    trunk: mlp.MlpParams
    log_std: np.ndarray

    def __post_init__(self):
        if self.trunk.sizes[-1] != ACTION_DIM:
            raise ValueError(f"policy outputs {self.trunk.sizes[-1]} values, actions have {ACTION_DIM}")
        self.log_std = np.clip(np.asarray(self.log_std, dtype=self.trunk.dtype), LOG_STD_MIN, LOG_STD_MAX)
        self.grad_log_std = np.zeros_like(self.log_std)

    @property
    def obs_dim(self) -> int:
        return self.trunk.sizes[0]

    def arrays(self) -> list:
        return self.trunk.arrays() + [self.log_std]

    def grads(self) -> list:
        return self.trunk.grads() + [self.grad_log_std]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.trunk.copy(), self.log_std.copy())

    def clamp(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def entries(self, prefix: str) -> dict:
        out = mlp.mlp_entries(self.trunk, prefix)
        out[f"{prefix}.log_std"] = self.log_std
        return out

    @classmethod
    def from_entries(cls, entries: dict, prefix: str) -> "GaussianPolicy":
        return cls(mlp.mlp_from_entries(entries, prefix), np.array(entries[f"{prefix}.log_std"], dtype=np.float32))


def make_policy(obs_dim: int, hidden, rng, init_log_std: float = -1.0, dtype=np.float32) -> GaussianPolicy:
    trunk = mlp.init_mlp((obs_dim, *hidden, ACTION_DIM), rng, dtype=dtype, out_scale=0.1)
    return GaussianPolicy(trunk, np.full(ACTION_DIM, init_log_std, dtype=dtype))


def log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_log_prob(u, mean, log_std) -> np.ndarray:
    """Log density of the squashed sample tanh(u) (sums over the last axis)."""
    u = np.asarray(u, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    z = (u - mean) / np.exp(log_std)
    lp = -0.5 * z * z - log_std - 0.5 * _LOG2PI
    return (lp - log1m_tanh2(u)).sum(axis=-1)


def mean_u(policy: GaussianPolicy, obs) -> np.ndarray:
    return mlp.forward(policy.trunk, obs)


def mean_action(policy: GaussianPolicy, obs) -> np.ndarray:
    return np.tanh(mean_u(policy, obs))


def sample_action(policy: GaussianPolicy, obs, rng: np.random.Generator):
    """Returns (squashed action, log_prob, pre-squash sample)."""
    mu = mean_u(policy, obs)
    noise = rng.standard_normal(mu.shape)
    u = mu + np.exp(policy.log_std.astype(np.float64)) * noise
    return np.tanh(u), gaussian_log_prob(u, mu, policy.log_std), u


def log_prob(policy: GaussianPolicy, obs, u) -> np.ndarray:
    return gaussian_log_prob(u, mean_u(policy, obs), policy.log_std)


def action_to_command(a, cfg: SimConfig | None = None) -> ActionCommand:
    cfg = cfg or SimConfig()
    a = [float(v) for v in a]
    if len(a) != ACTION_DIM:
        raise ValueError(f"expected {ACTION_DIM} action values, got {len(a)}")
    r = cfg.reach_radius
    return ActionCommand(
        (a[0] * cfg.v_max, a[1] * cfg.v_max),
        a[2] * cfg.yaw_rate_max,
        ((a[3] * r, a[4] * r, a[5] * r), (a[6] * r, a[7] * r, a[8] * r)),
        a[9] > 0.0,
        0.5 * (a[10] + 1.0),
    )


def command_to_action(cmd: ActionCommand, cfg: SimConfig | None = None, limit: float = LABEL_LIMIT) -> np.ndarray:
    """Inverse of ``action_to_command``, clipped to +-limit so it stays a tanh label."""
    cfg = cfg or SimConfig()
    r = cfg.reach_radius
    vals = [cmd.root_vel_cmd[0] / cfg.v_max, cmd.root_vel_cmd[1] / cfg.v_max, cmd.yaw_rate_cmd / cfg.yaw_rate_max]
    for h in cmd.hand_offsets:
        vals.extend(v / r for v in h)
    vals.append(1.0 if cmd.grasp else -1.0)
    vals.append(2.0 * cmd.lift - 1.0)
    return np.clip(np.asarray(vals), -limit, limit)
