"""Measurements taken from a SimState: reward inputs, teacher features and
the egocentric occupancy grid."""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..config import SimConfig
from ..rewards import RewardContext
from . import nav
from .state import GoalSpec, GridSpec, SimState, to_agent_frame, wrap_angle

DEFAULT_SIM = SimConfig()

FEATURE_VERSION = 1
PCD_POINTS = 8
# teacher feature layout, version 1 (agent-frame unless noted)
FEATURE_LAYOUT = (
    ("root_pos_room", 2),      # root xy relative to the room centre (world frame)
    ("root_heading", 2),       # cos, sin of root yaw (world frame)
    ("root_vel", 2),
    ("hand_left", 3),
    ("hand_right", 3),
    ("object_pos", 3),
    ("object_heading", 2),     # cos, sin of object yaw relative to root yaw
    ("object_vel", 3),
    ("goal_pos", 3),
    ("goal_heading", 2),       # cos, sin of goal yaw relative to root yaw
    ("object_to_goal", 2),
    ("guide_point", 2),        # active guide (or the goal once guides are used up)
    ("approach_point", 2),     # next path point toward the object (guide while carrying)
    ("hand_to_object", 1),
    ("point_cloud", 3 * PCD_POINTS),  # relative to the object centre, rotated into the agent frame
    ("standing", 1),
    ("carrying_target", 1),
    ("carrying_other", 1),
    ("stand_progress", 1),
)
FEATURE_DIM = sum(n for _, n in FEATURE_LAYOUT)


def feature_slices() -> dict:
    out, k = {}, 0
    for name, n in FEATURE_LAYOUT:
        out[name] = slice(k, k + n)
        k += n
    return out


def _unit(dx, dy, fallback):
    n = math.hypot(dx, dy)
    if n < 1e-12:
        return fallback
    return (dx / n, dy / n)


def active_guide(state: SimState, goal: GoalSpec) -> tuple:
    """The first guide not yet passed, or the goal position after the last one."""
    k = state.goal_slot(goal)
    idx = state.guide_index[k]
    if idx < len(goal.guides):
        return tuple(goal.guides[idx])
    return goal.goal_pose.xy


def z_target(obj, goal: GoalSpec, cfg: SimConfig) -> float:
    return max(obj.z_init, goal.goal_pose.z) + cfg.carry_height


def hand_point_distance(points: np.ndarray, hands) -> float:
    d = np.sqrt(((points[None, :, :] - np.asarray(hands)[:, None, :]) ** 2).sum(axis=2))
    return float(d.min())


def distances(state: SimState, goal: GoalSpec, cfg: SimConfig | None = None) -> RewardContext:
    """Every distance, direction and speed the shaped reward consumes.

    While the agent is not holding the object the robot direction points at
    the object; while carrying it points along the object's route. The object
    direction always points at the active guide (or goal). A zero-length
    direction falls back to the agent's facing.
    """
    cfg = cfg or DEFAULT_SIM
    a = state.agent
    obj = state.object_by_id(goal.object_id)
    r, o, g = a.root, obj.pose, goal.goal_pose
    facing = (math.cos(r.yaw), math.sin(r.yaw))
    gx, gy = active_guide(state, goal)
    d_obj = _unit(gx - o.x, gy - o.y, facing)
    if a.carrying == obj.id:
        d_rob = _unit(gx - r.x, gy - r.y, facing)
    else:
        d_rob = _unit(o.x - r.x, o.y - r.y, facing)
    return RewardContext(
        d_robot2object=math.hypot(r.x - o.x, r.y - o.y),
        d_hand2object=hand_point_distance(obj.world_points(), (a.hand_left, a.hand_right)),
        d_object2goal=math.hypot(o.x - g.x, o.y - g.y),
        d_object2guide=math.hypot(o.x - gx, o.y - gy),
        dhat=d_rob,
        v_r_proj=a.root_vel[0] * d_rob[0] + a.root_vel[1] * d_rob[1],
        v_o_proj=obj.vel[0] * d_obj[0] + obj.vel[1] * d_obj[1],
        delta_rot=abs(wrap_angle(o.yaw - g.yaw)),
        z_o=o.z,
        z_init=obj.z_init,
        z_target=z_target(obj, goal, cfg),
        dhat_object=d_obj,
    )


def approach_discs(state: SimState, exclude: int) -> tuple:
    """Static obstacles and the other objects (coarsely rounded so plans cache well)."""
    discs = [(ob.x, ob.y, ob.radius) for ob in state.obstacles]
    for o in state.objects:
        if o.id != exclude:
            discs.append((round(o.pose.x, 1), round(o.pose.y, 1), round(o.footprint_radius, 2)))
    return tuple(discs)


def approach_point(state: SimState, goal: GoalSpec, cfg: SimConfig | None = None) -> tuple:
    """Next point on a collision-free path from the agent to the goal's object."""
    cfg = cfg or DEFAULT_SIM
    a = state.agent
    obj = state.object_by_id(goal.object_id)
    start, end = a.root.xy, obj.pose.xy
    discs = approach_discs(state, obj.id)
    if nav.segment_clear(start, end, discs, cfg.body_radius + 0.05):
        return end
    return nav.waypoint(state.bounds, discs, start, end, cell=cfg.nav_cell,
                        inflate=cfg.body_radius + 0.15, lookahead=4)


@lru_cache(maxsize=64)
def _pcd_index(n_points: int, k: int) -> np.ndarray:
    return np.linspace(0, n_points, k, endpoint=False).astype(int)


def privileged_features(state: SimState, goal: GoalSpec, cfg: SimConfig | None = None) -> np.ndarray:
    """Teacher input vector; see ``FEATURE_LAYOUT`` for the field order."""
    cfg = cfg or DEFAULT_SIM
    a = state.agent
    r = a.root
    obj = state.object_by_id(goal.object_id)
    o, g = obj.pose, goal.goal_pose
    c, s = math.cos(r.yaw), math.sin(r.yaw)

    def frame(x, y):
        dx, dy = x - r.x, y - r.y
        return c * dx + s * dy, -s * dx + c * dy

    def vec(x, y):
        return c * x + s * y, -s * x + c * y

    bx0, by0, bx1, by1 = state.bounds
    f = [r.x - 0.5 * (bx0 + bx1), r.y - 0.5 * (by0 + by1), c, s]
    f.extend(vec(*a.root_vel))
    for h in (a.hand_left, a.hand_right):
        f.extend(frame(h[0], h[1]))
        f.append(h[2] - r.z)
    f.extend(frame(o.x, o.y))
    f.append(o.z - obj.z_init)
    f.extend((math.cos(o.yaw - r.yaw), math.sin(o.yaw - r.yaw)))
    f.extend(vec(obj.vel[0], obj.vel[1]))
    f.append(obj.vel[2])
    f.extend(frame(g.x, g.y))
    f.append(g.z)
    f.extend((math.cos(g.yaw - r.yaw), math.sin(g.yaw - r.yaw)))
    f.extend(vec(g.x - o.x, g.y - o.y))
    guide = active_guide(state, goal)
    f.extend(frame(*guide))
    if a.carrying == obj.id:
        f.extend(frame(*guide))
    else:
        f.extend(frame(*approach_point(state, goal, cfg)))
    pts = obj.world_points()
    f.append(hand_point_distance(pts, (a.hand_left, a.hand_right)))
    sub = pts[_pcd_index(len(pts), PCD_POINTS)]
    rel_x, rel_y = sub[:, 0] - o.x, sub[:, 1] - o.y
    pc = np.column_stack([c * rel_x + s * rel_y, -s * rel_x + c * rel_y, sub[:, 2] - r.z])
    out = np.empty(FEATURE_DIM)
    n = len(f)
    out[:n] = f
    out[n:n + 3 * PCD_POINTS] = pc.ravel()
    n += 3 * PCD_POINTS
    out[n] = 1.0 if a.standing else 0.0
    out[n + 1] = 1.0 if a.carrying == obj.id else 0.0
    out[n + 2] = 1.0 if (a.carrying is not None and a.carrying != obj.id) else 0.0
    out[n + 3] = a.stand_counter / max(1, cfg.standup_steps)
    return out


@lru_cache(maxsize=8)
def _cell_centres(cells: int, extent: float):
    k = (np.arange(cells) + 0.5) * (extent / cells) - 0.5 * extent
    fx, ly = np.meshgrid(k, k, indexing="ij")
    fx.flags.writeable = False
    ly.flags.writeable = False
    return fx, ly


SUBSAMPLES = 4  # per cell side when estimating footprint coverage


def _raster(grid: np.ndarray, channel: int, fx, ly, cx, cy, radius, half_cell, half_extent):
    """Write the fraction of each visible cell covered by a disc (max with what is there)."""
    reach = radius + half_cell
    if cx + reach <= 0.0 or abs(cx) - reach > half_extent or abs(cy) - reach > half_extent:
        return
    near = ((fx - cx) ** 2 + (ly - cy) ** 2 <= (radius + 1.5 * half_cell) ** 2) & (fx > 0.0)
    if not near.any():
        return
    offs = ((np.arange(SUBSAMPLES) + 0.5) / SUBSAMPLES - 0.5) * 2.0 * half_cell
    sx = fx[near][:, None, None] + offs[None, :, None] - cx
    sy = ly[near][:, None, None] + offs[None, None, :] - cy
    cover = ((sx * sx + sy * sy) <= radius * radius).mean(axis=(1, 2))
    view = grid[:, :, channel]
    view[near] = np.maximum(view[near], cover)


def egocentric_observation(state: SimState, grid: GridSpec | None = None) -> np.ndarray:
    """C x C x 3 agent-frame occupancy (static, movable, carried).

    Each cell holds the fraction of its area covered by footprints, so
    positions are readable below the cell size.

    Axis 0 runs from behind (index 0) to ahead, axis 1 from the agent's right
    to its left. Only the forward half-plane is visible; walls are not drawn.
    """
    grid = grid or GridSpec()
    C, E = grid.cells, grid.extent
    fx, ly = _cell_centres(C, float(E))
    out = np.zeros((C, C, 3), dtype=np.float32)
    root = state.agent.root
    hc = 0.5 * E / C
    he = 0.5 * E
    for ob in state.obstacles:
        x, y = to_agent_frame(root, ob.x, ob.y)
        _raster(out, 0, fx, ly, x, y, ob.radius, hc, he)
    carrying = state.agent.carrying
    for o in state.objects:
        x, y = to_agent_frame(root, o.pose.x, o.pose.y)
        _raster(out, 2 if o.id == carrying else 1, fx, ly, x, y, o.footprint_radius, hc, he)
    return out


def proprioception(state: SimState) -> np.ndarray:
    """Root velocity, both hands (agent frame), standing and carrying flags."""
    a = state.agent
    r = a.root
    vx, vy = to_agent_frame(r, r.x + a.root_vel[0], r.y + a.root_vel[1])
    out = [vx, vy]
    for h in (a.hand_left, a.hand_right):
        hx, hy = to_agent_frame(r, h[0], h[1])
        out.extend((hx, hy, h[2] - r.z))
    out.append(1.0 if a.standing else 0.0)
    out.append(1.0 if a.carrying is not None else 0.0)
    return np.asarray(out)


PROPRIO_DIM = 10
