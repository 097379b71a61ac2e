"""Shaped task reward, the release/step-back reward and their combination.

All functions are pure. Term order everywhere:

    0 robot2object_vel       exp(-2 (v_t - v_r.d)^2)
    1 robot2object_pos       exp(-0.5 d_ro^2)
    2 hand2object            exp(-5 d_ho)
    3 height                 (min(z_o, z_target) - z_init) / (z_target - z_init)
    4 object2goal_vel        exp(-2 (v_o_target - v_o.d)^2)
    5 object2goal_pos_far    exp(-d_guide)
    6 object2goal_pos_near   exp(-5 d_og)
    7 object2goal_rot        exp(-2 yaw_err)
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .config import RewardConfig

TERM_NAMES = (
    "robot2object_vel",
    "robot2object_pos",
    "hand2object",
    "height",
    "object2goal_vel",
    "object2goal_pos_far",
    "object2goal_pos_near",
    "object2goal_rot",
)


@dataclass(frozen=True)
class RewardContext:
    d_robot2object: float
    d_hand2object: float
    d_object2goal: float
    d_object2guide: float
    dhat: tuple
    v_r_proj: float
    v_o_proj: float
    delta_rot: float
    z_o: float
    z_init: float
    z_target: float
    # the object direction may differ from dhat (toward the object vs toward the goal)
    dhat_object: tuple | None = None


@dataclass(frozen=True)
class RewardBreakdown:
    terms: tuple
    task_reward: float
    style_reward: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict:
        out = dict(zip(TERM_NAMES, self.terms))
        out.update(task_reward=self.task_reward, style_reward=self.style_reward, total=self.total)
        return out

    def with_style(self, style: float) -> "RewardBreakdown":
        return RewardBreakdown(self.terms, self.task_reward, style, total_reward(self.task_reward, style))


def height_term(z_o: float, z_init: float, z_target: float, clamp: bool = True) -> float:
    if z_target <= z_init:
        # degenerate lift: nothing to raise
        return 1.0 if z_o >= z_target else 0.0
    r = (min(z_o, z_target) - z_init) / (z_target - z_init)
    return min(1.0, max(0.0, r)) if clamp else r


def task_reward_terms(ctx: RewardContext, cfg: RewardConfig | None = None) -> RewardBreakdown:
    cfg = cfg or RewardConfig()
    terms = (
        math.exp(-2.0 * (cfg.v_t - ctx.v_r_proj) ** 2),
        math.exp(-0.5 * ctx.d_robot2object ** 2),
        math.exp(-5.0 * ctx.d_hand2object),
        height_term(ctx.z_o, ctx.z_init, ctx.z_target, cfg.clamp_height),
        math.exp(-2.0 * (cfg.v_o_target - ctx.v_o_proj) ** 2),
        math.exp(-1.0 * ctx.d_object2guide),
        math.exp(-5.0 * ctx.d_object2goal),
        math.exp(-2.0 * ctx.delta_rot),
    )
    task = 0.0
    for a, r in zip(cfg.alpha, terms):
        task += a * r
    return RewardBreakdown(terms, task, 0.0, task)


def stage2_reward(ctx: RewardContext, cfg: RewardConfig | None = None) -> float:
    """Pays for torso and hand clearance, but only once the object is placed."""
    cfg = cfg or RewardConfig()
    if ctx.d_object2goal >= cfg.thresh_object2goal:
        return 0.0
    if ctx.d_robot2object > cfg.stage2_robot_cap:
        r_robot = 1.0
    else:
        r_robot = 1.0 - math.exp(-0.5 * ctx.d_robot2object)
    if ctx.d_hand2object > cfg.stage2_hand_cap:
        r_hand = 1.0
    else:
        r_hand = 1.0 - math.exp(-0.5 * ctx.d_hand2object)
    return 0.5 * r_robot + 0.5 * r_hand


def total_reward(task_r: float, style_r: float) -> float:
    return task_r + style_r
