"""Episode starts and end conditions shared by training, distillation and evaluation."""
from __future__ import annotations

import math

from ..config import RewardConfig, SimConfig
from ..sim.engine import reset
from ..sim.sensors import hand_point_distance
from ..sim.state import GoalSpec, SimState

REST_SPEED = 0.05
REST_HEIGHT = 0.05


def start_single(single, seed: int, cfg: SimConfig | None = None) -> SimState:
    return reset(single.task, single.sub_task_index, seed, single.spawn, cfg)


def object_goal_distance(state: SimState, goal: GoalSpec) -> float:
    o = state.object_by_id(goal.object_id).pose
    return math.hypot(o.x - goal.goal_pose.x, o.y - goal.goal_pose.y)


def placed(state: SimState, goal: GoalSpec) -> bool:
    """Released inside the success radius and at rest."""
    obj = state.object_by_id(goal.object_id)
    if state.agent.carrying == obj.id:
        return False
    if obj.pose.z > obj.z_init + REST_HEIGHT or math.hypot(obj.vel[0], obj.vel[1]) >= REST_SPEED:
        return False
    return object_goal_distance(state, goal) < goal.success_radius


def stepped_back(state: SimState, goal: GoalSpec, rcfg: RewardConfig | None = None) -> bool:
    rcfg = rcfg or RewardConfig()
    a = state.agent
    obj = state.object_by_id(goal.object_id)
    if math.hypot(a.root.x - obj.pose.x, a.root.y - obj.pose.y) < rcfg.stage2_robot_cap:
        return False
    return hand_point_distance(obj.world_points(), (a.hand_left, a.hand_right)) >= rcfg.stage2_hand_cap


def episode_done(state: SimState, goal: GoalSpec, cfg: SimConfig | None = None,
                 rcfg: RewardConfig | None = None) -> bool:
    return placed(state, goal) and stepped_back(state, goal, rcfg)
