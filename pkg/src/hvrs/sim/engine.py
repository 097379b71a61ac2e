"""Kinematic step function and episode reset."""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Optional

import numpy as np

from ..config import SimConfig
from ..tasks.layouts import get_layout
from .state import (
    ActionCommand,
    AgentState,
    GoalSpec,
    Pose2Z,
    SceneObject,
    SimState,
    StepEvents,
    rot,
    wrap_angle,
)

DEFAULT_SIM = SimConfig()
SUPPORT_HEIGHT = 0.0


class SimError(ValueError):
    pass


def _clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def _in_bounds(bounds, x, y) -> bool:
    return bounds[0] <= x <= bounds[2] and bounds[1] <= y <= bounds[3]


def _advance_guides(objects, goals, guide_index, pass_radius):
    out = []
    for k, g in enumerate(goals):
        idx = guide_index[k] if k < len(guide_index) else 0
        o = next(ob for ob in objects if ob.id == g.object_id)
        while idx < len(g.guides) and math.hypot(o.pose.x - g.guides[idx][0], o.pose.y - g.guides[idx][1]) < pass_radius:
            idx += 1
        out.append(idx)
    return tuple(out)


def reset(task, sub_task_index: int, seed: int, initial_agent: Optional[AgentState] = None,
          cfg: SimConfig | None = None) -> SimState:
    """Episode start for ``task`` with sub-task ``sub_task_index`` active.

    Objects start at the task's start poses (non-task objects at their parking
    spots). The agent is ``initial_agent`` verbatim when given, otherwise the
    layout's default spawn.
    """
    cfg = cfg or DEFAULT_SIM
    if sub_task_index not in (0, 1):
        raise SimError("invalid sub-task")
    layout = get_layout(task.layout)
    starts = {s.object_id: s.start_pose for s in task.sub_tasks}
    objects = []
    for t in layout.catalog:
        pose = starts.get(t.id, t.park_pose)
        objects.append(SceneObject(t.id, t.category, pose, (0.0, 0.0, 0.0), pose.z, t.point_cloud(),
                                   t.footprint_radius, t.height, True))
    if initial_agent is None:
        from ..tasks.dataset import spawn_agent
        sp = layout.spawn
        agent = spawn_agent(sp.x, sp.y, sp.yaw, torso_height=cfg.torso_height)
    else:
        if not _in_bounds(layout.bounds, initial_agent.root.x, initial_agent.root.y):
            raise SimError("spawn out of bounds")
        if initial_agent.carrying is not None and initial_agent.carrying not in starts and \
                all(t.id != initial_agent.carrying for t in layout.catalog):
            raise SimError("spawn carries an unknown object")
        agent = initial_agent
    goals = tuple(s.goal for s in task.sub_tasks)
    guide_index = _advance_guides(objects, goals, (0, 0), cfg.guide_pass_radius)
    return SimState(agent=agent, objects=tuple(objects), obstacles=layout.obstacles, goals=goals,
                    bounds=layout.bounds, layout_id=layout.id, guide_index=guide_index,
                    step_count=0, rng_seed=int(seed) & 0xFFFFFFFFFFFFFFFF)


def clamp_action(action: ActionCommand, standing: bool, cfg: SimConfig) -> ActionCommand:
    vmax = cfg.v_max * (1.0 if standing else cfg.bent_speed_factor)
    vx = _clamp(float(action.root_vel_cmd[0]), -vmax, vmax)
    vy = _clamp(float(action.root_vel_cmd[1]), -vmax, vmax)
    n = math.hypot(vx, vy)
    if n > vmax:
        vx, vy = vx * vmax / n, vy * vmax / n
    offsets = []
    for h in action.hand_offsets:
        n = math.sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2])
        s = cfg.reach_radius / n if n > cfg.reach_radius else 1.0
        offsets.append((h[0] * s, h[1] * s, h[2] * s))
    return ActionCommand(
        (vx, vy),
        _clamp(float(action.yaw_rate_cmd), -cfg.yaw_rate_max, cfg.yaw_rate_max),
        tuple(offsets),
        bool(action.grasp),
        _clamp(float(action.lift), 0.0, 1.0),
    )


def hand_to_object_distance(obj: SceneObject, hands) -> float:
    pts = obj.world_points()
    best = math.inf
    for h in hands:
        d = np.sqrt(((pts - np.asarray(h)) ** 2).sum(axis=1)).min()
        best = min(best, float(d))
    return best


def _push_out(px, py, cx, cy, min_dist, fallback):
    dx, dy = px - cx, py - cy
    d = math.hypot(dx, dy)
    if d >= min_dist:
        return px, py, False
    if d < 1e-12:
        dx, dy, d = fallback[0], fallback[1], 1.0
    return cx + dx / d * min_dist, cy + dy / d * min_dist, True


def step(state: SimState, action: ActionCommand, dt: float | None = None,
         cfg: SimConfig | None = None) -> tuple[SimState, StepEvents]:
    cfg = cfg or DEFAULT_SIM
    dt = cfg.dt if dt is None else dt
    if not (dt > 0.0 and math.isfinite(dt)):
        raise SimError("invalid dt")
    if not action.is_finite():
        raise SimError("invalid action")
    a = state.agent
    act = clamp_action(action, a.standing, cfg)
    bounds = state.bounds
    collided = False

    standing, counter = a.standing, a.stand_counter
    if not standing:
        counter = counter + 1 if (act.lift >= cfg.standup_lift and not act.grasp) else 0
        if counter >= cfg.standup_steps:
            standing, counter = True, 0

    # root
    yaw0 = a.root.yaw
    wvx, wvy = rot(yaw0, *act.root_vel_cmd)
    x = a.root.x + wvx * dt
    y = a.root.y + wvy * dt
    yaw = wrap_angle(yaw0 + act.yaw_rate_cmd * dt)
    facing = (math.cos(yaw), math.sin(yaw))
    for ob in state.obstacles:
        x, y, hit = _push_out(x, y, ob.x, ob.y, ob.radius + cfg.body_radius, (-facing[0], -facing[1]))
        collided |= hit
    br = cfg.body_radius
    cx, cy = _clamp(x, bounds[0] + br, bounds[2] - br), _clamp(y, bounds[1] + br, bounds[3] - br)
    collided |= (cx != x or cy != y)
    x, y = cx, cy
    root = Pose2Z(x, y, a.root.z, yaw)

    # hands track commanded offsets at bounded speed, then stay within reach
    hands = []
    max_move = cfg.hand_speed * dt
    for cur, off in zip((a.hand_left, a.hand_right), act.hand_offsets):
        ox, oy = rot(yaw, off[0], off[1])
        tx, ty, tz = x + ox, y + oy, root.z + off[2]
        dx, dy, dz = tx - cur[0], ty - cur[1], tz - cur[2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d > max_move:
            s = max_move / d
            dx, dy, dz = dx * s, dy * s, dz * s
        hx, hy, hz = cur[0] + dx, cur[1] + dy, cur[2] + dz
        rx, ry, rz = hx - x, hy - y, hz - root.z
        r = math.sqrt(rx * rx + ry * ry + rz * rz)
        if r > cfg.reach_radius:
            s = cfg.reach_radius / r
            hx, hy, hz = x + rx * s, y + ry * s, root.z + rz * s
        hands.append((hx, hy, hz))
    hl, hr = hands

    # attach / detach
    carrying, grip_yaw = a.carrying, a.grip_yaw
    attached = released = False
    if carrying is not None and not act.grasp:
        carrying, released = None, True
        standing, counter = False, 0
    elif carrying is None and act.grasp and standing:
        best, best_d = None, cfg.grasp_radius
        for o in state.objects:
            if not o.movable:
                continue
            d = hand_to_object_distance(o, hands)
            if d < best_d:
                best, best_d = o, d
        if best is not None:
            carrying, attached = best.id, True
            grip_yaw = wrap_angle(best.pose.yaw - yaw)

    decel = cfg.v_max / cfg.release_decay_time
    objects = []
    carried = None
    for o in state.objects:
        p = o.pose
        if o.id == carrying:
            mx, my = 0.5 * (hl[0] + hr[0]), 0.5 * (hl[1] + hr[1])
            zt = o.z_init + act.lift * cfg.carry_height
            dz = _clamp(zt - p.z, -cfg.lift_speed * dt, cfg.lift_speed * dt)
            nz = max(0.0, p.z + dz)
            for ob in state.obstacles:
                mx, my, hit = _push_out(mx, my, ob.x, ob.y, ob.radius + o.footprint_radius, facing)
                collided |= hit
            mx = _clamp(mx, bounds[0] + o.footprint_radius, bounds[2] - o.footprint_radius)
            my = _clamp(my, bounds[1] + o.footprint_radius, bounds[3] - o.footprint_radius)
            vel = ((mx - p.x) / dt, (my - p.y) / dt, (nz - p.z) / dt)
            carried = replace(o, pose=Pose2Z(mx, my, nz, yaw + grip_yaw), vel=vel)
            objects.append(carried)
            continue
        vx, vy, _ = o.vel
        sp = math.hypot(vx, vy)
        if o.id == a.carrying and released and sp > cfg.v_max:
            vx, vy, sp = vx * cfg.v_max / sp, vy * cfg.v_max / sp, cfg.v_max
        if sp > 0.0:
            ns = max(0.0, sp - decel * dt)
            vx, vy = vx * ns / sp, vy * ns / sp
        nx, ny = p.x + vx * dt, p.y + vy * dt
        nz = max(SUPPORT_HEIGHT, p.z - cfg.fall_speed * dt) if p.z > SUPPORT_HEIGHT else p.z
        objects.append(replace(o, pose=Pose2Z(nx, ny, nz, p.yaw), vel=(vx, vy, (nz - p.z) / dt)))

    # the agent body and the carried object shove free objects aside
    final = []
    for o in objects:
        if o.id == carrying or not o.movable:
            final.append(o)
            continue
        px, py = o.pose.x, o.pose.y
        pushed = False
        px, py, hit = _push_out(px, py, x, y, cfg.body_radius + o.footprint_radius, facing)
        pushed |= hit
        if carried is not None:
            px, py, hit = _push_out(px, py, carried.pose.x, carried.pose.y,
                                    carried.footprint_radius + o.footprint_radius, facing)
            pushed |= hit
        for ob in state.obstacles:
            px, py, _ = _push_out(px, py, ob.x, ob.y, ob.radius + o.footprint_radius, facing)
        px = _clamp(px, bounds[0] + o.footprint_radius, bounds[2] - o.footprint_radius)
        py = _clamp(py, bounds[1] + o.footprint_radius, bounds[3] - o.footprint_radius)
        if px != o.pose.x or py != o.pose.y:
            vx, vy = (px - o.pose.x) / dt + o.vel[0], (py - o.pose.y) / dt + o.vel[1]
            sp = math.hypot(vx, vy)
            if sp > cfg.v_max:
                vx, vy = vx * cfg.v_max / sp, vy * cfg.v_max / sp
            o = replace(o, pose=Pose2Z(px, py, o.pose.z, o.pose.yaw), vel=(vx, vy, o.vel[2]))
        collided |= pushed
        final.append(o)
    objects = tuple(final)

    agent = AgentState(root=root, root_vel=(wvx, wvy), hand_left=hl, hand_right=hr, carrying=carrying,
                       standing=standing, stand_counter=counter, grip_yaw=grip_yaw if carrying is not None else 0.0)
    guide_index = _advance_guides(objects, state.goals, state.guide_index, cfg.guide_pass_radius)
    new = replace(state, agent=agent, objects=objects, guide_index=guide_index, step_count=state.step_count + 1)
    return new, StepEvents(attached=attached, released=released, collided=collided)


def goal_for(state: SimState, k: int) -> GoalSpec:
    return state.goals[k]
