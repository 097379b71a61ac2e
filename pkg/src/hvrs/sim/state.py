"""Value types of the kinematic rearrangement simulator."""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    r -= math.pi
    if r <= -math.pi:
        r = math.pi
    return r


def rot(yaw: float, x: float, y: float) -> tuple[float, float]:
    c, s = math.cos(yaw), math.sin(yaw)
    return c * x - s * y, s * x + c * y


def to_agent_frame(root: "Pose2Z", x: float, y: float) -> tuple[float, float]:
    return rot(-root.yaw, x - root.x, y - root.y)


@dataclass(frozen=True)
class Pose2Z:
    x: float
    y: float
    z: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if self.z < 0.0:
            raise ValueError(f"negative height {self.z}")

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.yaw]


@dataclass(frozen=True)
class Obstacle:
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class AgentState:
    root: Pose2Z
    root_vel: tuple[float, float] = (0.0, 0.0)
    hand_left: tuple[float, float, float] = (0.0, 0.0, 0.0)
    hand_right: tuple[float, float, float] = (0.0, 0.0, 0.0)
    carrying: Optional[int] = None
    standing: bool = True
    # consecutive stand-up steps while bent
    stand_counter: int = 0
    # carried object yaw relative to the root
    grip_yaw: float = 0.0


@dataclass(frozen=True)
class SceneObject:
    id: int
    category: int
    pose: Pose2Z
    vel: tuple[float, float, float]
    z_init: float
    point_cloud: np.ndarray = field(compare=False, repr=False)
    footprint_radius: float = 0.2
    height: float = 0.5
    movable: bool = True

    def world_points(self) -> np.ndarray:
        c, s = math.cos(self.pose.yaw), math.sin(self.pose.yaw)
        pc = self.point_cloud
        out = np.empty_like(pc, dtype=np.float64)
        out[:, 0] = self.pose.x + c * pc[:, 0] - s * pc[:, 1]
        out[:, 1] = self.pose.y + s * pc[:, 0] + c * pc[:, 1]
        out[:, 2] = self.pose.z + pc[:, 2]
        return out


@dataclass(frozen=True)
class GoalSpec:
    object_id: int
    goal_pose: Pose2Z
    guides: tuple = ()
    success_radius: float = 0.5


@dataclass(frozen=True)
class GridSpec:
    cells: int = 32
    extent: float = 8.0


@dataclass(frozen=True)
class SimState:
    agent: AgentState
    objects: tuple
    obstacles: tuple
    goals: tuple
    bounds: tuple[float, float, float, float]
    layout_id: str = ""
    guide_index: tuple = (0, 0)
    step_count: int = 0
    rng_seed: int = 0

    def object_by_id(self, oid: int) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(f"no object with id {oid}")

    def goal_slot(self, goal: GoalSpec) -> int:
        for k, g in enumerate(self.goals):
            if g is goal or g == goal:
                return k
        for k, g in enumerate(self.goals):
            if g.object_id == goal.object_id:
                return k
        raise KeyError(f"goal for object {goal.object_id} not active")


@dataclass(frozen=True)
class StepEvents:
    attached: bool = False
    released: bool = False
    collided: bool = False


@dataclass(frozen=True)
class ActionCommand:
    root_vel_cmd: tuple[float, float] = (0.0, 0.0)
    yaw_rate_cmd: float = 0.0
    hand_offsets: tuple = ((0.2, 0.2, -0.3), (0.2, -0.2, -0.3))
    grasp: bool = False
    lift: float = 0.0

    def values(self) -> list[float]:
        out = [*self.root_vel_cmd, self.yaw_rate_cmd]
        for h in self.hand_offsets:
            out.extend(h)
        out.append(1.0 if self.grasp else 0.0)
        out.append(self.lift)
        return [float(v) for v in out]

    def is_finite(self) -> bool:
        if len(self.root_vel_cmd) != 2 or len(self.hand_offsets) != 2:
            return False
        if any(len(h) != 3 for h in self.hand_offsets):
            return False
        return all(math.isfinite(v) for v in self.values())


ACTION_DIM = 11
REST_OFFSETS = ((0.2, 0.2, -0.3), (0.2, -0.2, -0.3))


def hand_offsets_of(agent: AgentState) -> tuple:
    """Current hand positions expressed as agent-frame offsets from the root."""
    root = agent.root
    out = []
    for h in (agent.hand_left, agent.hand_right):
        x, y = to_agent_frame(root, h[0], h[1])
        out.append((x, y, h[2] - root.z))
    return tuple(out)


def hold_action(state: SimState) -> ActionCommand:
    """Command that keeps the agent still with hands where they are."""
    a = state.agent
    return ActionCommand(hand_offsets=hand_offsets_of(a), grasp=a.carrying is not None, lift=0.0)


def state_digest(state: SimState) -> str:
    """SHA-256 over every float and flag of the state (point clouds included)."""
    h = hashlib.sha256()

    def put(*vals):
        for v in vals:
            if v is None:
                h.update(b"N")
            elif isinstance(v, bool):
                h.update(b"T" if v else b"F")
            elif isinstance(v, int):
                h.update(struct.pack("<q", v))
            else:
                h.update(struct.pack("<d", float(v)))

    a = state.agent
    put(*a.root.as_list(), *a.root_vel, *a.hand_left, *a.hand_right, a.carrying, a.standing,
        a.stand_counter, a.grip_yaw)
    for o in state.objects:
        put(o.id, o.category, *o.pose.as_list(), *o.vel, o.z_init, o.footprint_radius, o.height, o.movable)
        h.update(np.ascontiguousarray(o.point_cloud, dtype=np.float64).tobytes())
    for ob in state.obstacles:
        put(ob.x, ob.y, ob.radius)
    for g in state.goals:
        put(g.object_id, *g.goal_pose.as_list(), g.success_radius)
        for gp in g.guides:
            put(*gp)
    put(*state.bounds, *state.guide_index, state.step_count, state.rng_seed)
    h.update(state.layout_id.encode())
    return h.hexdigest()
