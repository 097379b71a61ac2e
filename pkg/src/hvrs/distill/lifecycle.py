"""Rule-based simulation of the human issuing the second instruction."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ..config import DaggerConfig
from ..sim.state import SimState


@dataclass(frozen=True)
class SwitchThresholds:
    speed_thresh: float = 0.05
    eval_success_thresh: float = 0.5
    distance_thresh: float = 1.0
    time_thresh: int = 60

    @classmethod
    def from_config(cls, cfg: DaggerConfig) -> "SwitchThresholds":
        return cls(cfg.speed_thresh, cfg.eval_success_thresh, cfg.distance_thresh, cfg.time_thresh)


@dataclass(frozen=True)
class LifecycleState:
    instruction_id: int = 1
    latched: bool = False
    progress_step: int = 0
    thresholds: SwitchThresholds = SwitchThresholds()

    def __post_init__(self):
        if self.instruction_id not in (1, 2):
            raise ValueError(f"instruction id must be 1 or 2, got {self.instruction_id}")
        if self.latched and self.instruction_id != 2:
            raise ValueError("a latched lifecycle must be on instruction 2")

    @property
    def sub_task_index(self) -> int:
        return self.instruction_id - 1


def switch_instruction(s: float, d: float, r: float, p: int, state: LifecycleState):
    """Advance the lifecycle given object speed ``s``, object-to-goal distance
    ``d``, robot-to-object distance ``r`` (all for the first object) and the
    step count ``p``. Once the second instruction has been issued it stays.

    Returns (new lifecycle state, supervising teacher id).
    """
    th = state.thresholds
    if state.latched:
        new = replace(state, progress_step=p)
    elif s < th.speed_thresh and d < th.eval_success_thresh and r > th.distance_thresh and p > th.time_thresh:
        new = replace(state, instruction_id=2, latched=True, progress_step=p)
    else:
        new = replace(state, progress_step=p)
    return new, new.instruction_id


def first_object_measurements(state: SimState) -> tuple:
    """(speed, object-to-goal, robot-to-object) for the first sub-task's object."""
    goal = state.goals[0]
    o = state.object_by_id(goal.object_id)
    r = state.agent.root
    s = math.sqrt(o.vel[0] ** 2 + o.vel[1] ** 2 + o.vel[2] ** 2)
    d = math.hypot(o.pose.x - goal.goal_pose.x, o.pose.y - goal.goal_pose.y)
    return s, d, math.hypot(o.pose.x - r.x, o.pose.y - r.y)


def advance(state: SimState, lifecycle: LifecycleState, p: int):
    s, d, r = first_object_measurements(state)
    return switch_instruction(s, d, r, p, lifecycle)
