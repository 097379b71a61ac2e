"""Scripted finite-state controller with full state access.

It serves as the reference-motion source for the style discriminator, as the
behaviour prior for the learned teachers and as a baseline teacher pair.
Phases, checked in order every step:

    release   holding some other object: let go
    retreat   target placed and released: back off to >= 1.2 m, then idle
    stand     bent over: hold lift high with an open grip until upright
    carry     holding the target: follow the guides, align, lower, release
    approach  walk to the object, straddle it with both hands and grasp
"""
from __future__ import annotations

import math

from ..config import SimConfig
from ..sim import sensors
from ..sim.state import REST_OFFSETS, ActionCommand, GoalSpec, SimState, rot, to_agent_frame, wrap_angle

DEFAULT_SIM = SimConfig()

PLACE_TOL = 0.15
# once lowering has started inside this radius it carries on
LOWER_KEEP = 0.3
RETREAT_DIST = 1.2
STANDOFF_MARGIN = 0.07
CARRY_REACH = 0.55
YAW_GAIN = 4.0


def _clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def _world_to_cmd(state: SimState, vx: float, vy: float, vmax: float) -> tuple:
    n = math.hypot(vx, vy)
    if n > vmax:
        vx, vy = vx * vmax / n, vy * vmax / n
    return rot(-state.agent.root.yaw, vx, vy)


def _yaw_rate(cur: float, desired: float, cfg: SimConfig) -> float:
    return _clamp(YAW_GAIN * wrap_angle(desired - cur), -cfg.yaw_rate_max, cfg.yaw_rate_max)


def _grip_offsets(obj, root) -> tuple:
    """Hand offsets that straddle the object's top ring wherever it sits."""
    r = obj.footprint_radius
    x, y = to_agent_frame(root, obj.pose.x, obj.pose.y)
    z = max(-0.8, obj.pose.z + obj.height - root.z - 0.02)
    return ((x, y + r, z), (x, y - r, z))


def _body_free(state: SimState, x: float, y: float, cfg: SimConfig, skip=()) -> bool:
    br = cfg.body_radius
    b = state.bounds
    if not (b[0] + br <= x <= b[2] - br and b[1] + br <= y <= b[3] - br):
        return False
    for ob in state.obstacles:
        if math.hypot(x - ob.x, y - ob.y) < ob.radius + br + 0.02:
            return False
    for o in state.objects:
        if o.id in skip:
            continue
        if math.hypot(x - o.pose.x, y - o.pose.y) < o.footprint_radius + br + 0.02:
            return False
    return True


def scripted_oracle(state: SimState, goal: GoalSpec, cfg: SimConfig | None = None) -> ActionCommand:
    cfg = cfg or DEFAULT_SIM
    a = state.agent
    obj = state.object_by_id(goal.object_id)
    vmax = cfg.v_max * (1.0 if a.standing else cfg.bent_speed_factor)
    g = goal.goal_pose
    d_og = math.hypot(obj.pose.x - g.x, obj.pose.y - g.y)

    if a.carrying is not None and a.carrying != obj.id:
        return ActionCommand(hand_offsets=REST_OFFSETS, grasp=False, lift=0.0)

    if a.carrying is None and d_og < goal.success_radius * 0.8 and obj.pose.z <= obj.z_init + 0.3:
        return _retreat(state, obj, vmax, cfg)

    if not a.standing:
        return ActionCommand(hand_offsets=REST_OFFSETS, grasp=False, lift=1.0)

    if a.carrying == obj.id:
        return _carry(state, goal, obj, cfg)
    return _approach(state, goal, obj, cfg)


def _retreat(state, obj, vmax, cfg) -> ActionCommand:
    root = state.agent.root
    dx, dy = root.x - obj.pose.x, root.y - obj.pose.y
    d = math.hypot(dx, dy)
    if d >= RETREAT_DIST:
        return ActionCommand(hand_offsets=REST_OFFSETS, grasp=False, lift=0.0)
    base = math.atan2(dy, dx) if d > 1e-9 else root.yaw + math.pi
    target = None
    for k in (0, 1, -1, 2, -2, 3, -3, 4, -4, 5, -5, 6):
        ang = base + k * math.pi / 12
        tx = obj.pose.x + (RETREAT_DIST + 0.15) * math.cos(ang)
        ty = obj.pose.y + (RETREAT_DIST + 0.15) * math.sin(ang)
        mx, my = 0.5 * (tx + root.x), 0.5 * (ty + root.y)
        if _body_free(state, tx, ty, cfg) and _body_free(state, mx, my, cfg, skip=(obj.id,)):
            target = (tx, ty)
            break
    if target is None:
        target = (obj.pose.x + (RETREAT_DIST + 0.15) * math.cos(base),
                  obj.pose.y + (RETREAT_DIST + 0.15) * math.sin(base))
    wx, wy = target[0] - root.x, target[1] - root.y
    n = math.hypot(wx, wy)
    speed = min(vmax, 3.0 * n)
    cmd = _world_to_cmd(state, wx / max(n, 1e-9) * speed, wy / max(n, 1e-9) * speed, vmax)
    return ActionCommand(cmd, 0.0, REST_OFFSETS, False, 0.0)


def _approach(state, goal, obj, cfg) -> ActionCommand:
    a = state.agent
    root = a.root
    ox, oy = obj.pose.x, obj.pose.y
    d = math.hypot(ox - root.x, oy - root.y)
    standoff = CARRY_REACH
    face = math.atan2(oy - root.y, ox - root.x)
    yaw_rate = _yaw_rate(root.yaw, face, cfg)
    yaw_err = abs(wrap_angle(face - root.yaw))

    if d > standoff + 0.6:
        wx, wy = sensors.approach_point(state, goal, cfg)
        vx, vy = wx - root.x, wy - root.y
        n = math.hypot(vx, vy)
        speed = cfg.v_max
        cmd = _world_to_cmd(state, vx / max(n, 1e-9) * speed, vy / max(n, 1e-9) * speed, cfg.v_max)
        return ActionCommand(cmd, yaw_rate, REST_OFFSETS, False, 0.0)

    # close in to the standoff distance along the line of sight
    err = d - standoff
    speed = _clamp(3.0 * err, -0.6, cfg.v_max)
    ux, uy = (ox - root.x) / max(d, 1e-9), (oy - root.y) / max(d, 1e-9)
    cmd = _world_to_cmd(state, ux * speed, uy * speed, cfg.v_max)
    if abs(err) > 0.12 or yaw_err > 0.3:
        return ActionCommand(cmd, yaw_rate, REST_OFFSETS, False, 0.0)
    offsets = _grip_offsets(obj, root)
    hands = (a.hand_left, a.hand_right)
    d_target = sensors.hand_point_distance(obj.world_points(), hands)
    nearest_other = min((sensors.hand_point_distance(o.world_points(), hands)
                         for o in state.objects if o.id != obj.id), default=math.inf)
    mx = 0.5 * (a.hand_left[0] + a.hand_right[0]) - ox
    my = 0.5 * (a.hand_left[1] + a.hand_right[1]) - oy
    # grasp only once the hands straddle the object, so it does not jump on attach
    grasp = d_target < 0.8 * cfg.grasp_radius and d_target < nearest_other and math.hypot(mx, my) < 0.08
    return ActionCommand(cmd, yaw_rate, offsets, grasp, 0.0)


def _carry(state, goal, obj, cfg) -> ActionCommand:
    a = state.agent
    root = a.root
    g = goal.goal_pose
    hold = to_agent_frame(root, obj.pose.x, obj.pose.y)
    offsets = _grip_offsets_held(a, root)
    d_og = math.hypot(obj.pose.x - g.x, obj.pose.y - g.y)
    lifted = obj.pose.z >= obj.z_init + 0.5 * cfg.carry_height

    tx, ty = sensors.active_guide(state, goal)
    if d_og < 1.0:
        tx, ty = g.x, g.y
    dx, dy = tx - obj.pose.x, ty - obj.pose.y
    dist = math.hypot(dx, dy)

    # yaw: travel heading when far, goal orientation (if the body fits) when near
    desired = math.atan2(dy, dx) if dist > 1e-6 else root.yaw
    if d_og < 1.0:
        want = wrap_angle(g.yaw - a.grip_yaw)
        bx = g.x - math.cos(want) * hold[0] + math.sin(want) * hold[1]
        by = g.y - math.sin(want) * hold[0] - math.cos(want) * hold[1]
        desired = want if _body_free(state, bx, by, cfg, skip=(obj.id,)) else root.yaw
    yaw_rate = _yaw_rate(root.yaw, desired, cfg)

    lowering = d_og < PLACE_TOL or (d_og < LOWER_KEEP and obj.pose.z < obj.z_init + cfg.carry_height - 0.05)
    if not lifted and not lowering:
        return ActionCommand((0.0, 0.0), 0.0, offsets, True, 1.0)

    if lowering:
        if obj.pose.z > obj.z_init + 0.02:
            return ActionCommand((0.0, 0.0), 0.0, offsets, True, 0.0)
        return ActionCommand((0.0, 0.0), 0.0, offsets, False, 0.0)

    speed = min(cfg.v_max, 2.0 * dist) if d_og < 1.0 else cfg.v_max
    vx, vy = dx / max(dist, 1e-9) * speed, dy / max(dist, 1e-9) * speed
    # the object sits ahead of the root, so turning swings it: cancel that
    ox, oy = rot(root.yaw, hold[0], hold[1])
    vx += yaw_rate * oy
    vy -= yaw_rate * ox
    cmd = _world_to_cmd(state, vx, vy, cfg.v_max)
    return ActionCommand(cmd, yaw_rate, offsets, True, 1.0)


def _grip_offsets_held(a, root) -> tuple:
    out = []
    for h in (a.hand_left, a.hand_right):
        x, y = to_agent_frame(root, h[0], h[1])
        out.append((x, y, h[2] - root.z))
    return tuple(out)
