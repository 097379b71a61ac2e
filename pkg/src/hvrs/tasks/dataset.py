"""Two-object rearrangement tasks: generation and the pretraining split."""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..sim import nav
from ..sim.state import REST_OFFSETS, AgentState, GoalSpec, Pose2Z, rot
from .layouts import RoomLayout, get_layout, object_name, region_name

SPLITS = ("train", "unseen")
GUIDE_SPACING = 1.0
SPAWN_RADIUS = 1.0


@dataclass(frozen=True)
class InstructionSpec:
    object_token: int
    source_token: int
    target_token: int
    text: str = ""

    @property
    def tokens(self) -> tuple[int, int, int]:
        return (self.object_token, self.source_token, self.target_token)


@dataclass(frozen=True)
class SubTask:
    object_id: int
    start_pose: Pose2Z
    goal: GoalSpec
    instruction: InstructionSpec


@dataclass(frozen=True)
class TaskSpec:
    id: str
    layout: str
    sub_tasks: tuple
    split: str = "train"

    def __post_init__(self):
        if len(self.sub_tasks) != 2:
            raise ValueError(f"task {self.id}: expected 2 sub-tasks, got {len(self.sub_tasks)}")
        if self.sub_tasks[0].object_id == self.sub_tasks[1].object_id:
            raise ValueError(f"task {self.id}: both sub-tasks move object {self.sub_tasks[0].object_id}")
        if self.split not in SPLITS:
            raise ValueError(f"task {self.id}: unknown split {self.split!r}")


@dataclass(frozen=True)
class SingleTask:
    """One single-object pretraining task (one half of a two-object task)."""
    task: TaskSpec
    sub_task_index: int
    spawn: Optional[AgentState] = None

    @property
    def id(self) -> str:
        return f"{self.task.id}/{self.sub_task_index + 1}"


def check_layout(layout: RoomLayout) -> None:
    if sum(1 for _ in layout.catalog) < 3 or len(layout.regions) < 3:
        raise ValueError(f"layout {layout.id!r} needs >= 3 movable objects and >= 3 regions")


def scene_discs(layout: RoomLayout, poses: dict, exclude: int) -> tuple:
    """Static obstacles plus every object except ``exclude`` at ``poses``."""
    discs = list(layout.obstacle_discs())
    for t in layout.catalog:
        if t.id == exclude:
            continue
        p = poses.get(t.id, t.park_pose)
        discs.append((p.x, p.y, t.footprint_radius))
    return tuple(discs)


def compute_guides(layout: RoomLayout, start: Pose2Z, goal: Pose2Z, discs) -> tuple:
    path = nav.shortest_path(layout.bounds, discs, start.xy, goal.xy, cell=0.25, inflate=0.45)
    pts = nav.resample_polyline(path, GUIDE_SPACING)
    guides = pts[1:] if len(pts) > 1 else pts
    return tuple((round(x, 6), round(y, 6)) for x, y in guides)


def _sample_in_region(rng, layout: RoomLayout, token: int, radius: float, taken: list):
    reg = layout.region(token)
    for _ in range(100):
        r = reg.radius * 0.6 * math.sqrt(rng.uniform())
        a = rng.uniform(-math.pi, math.pi)
        x, y = reg.x + r * math.cos(a), reg.y + r * math.sin(a)
        ok = all(math.hypot(x - ox, y - oy) >= orad + radius + 0.1 for ox, oy, orad in layout.obstacle_discs())
        ok = ok and all(math.hypot(x - tx, y - ty) >= tr + radius + 0.35 for tx, ty, tr in taken)
        if ok:
            return Pose2Z(round(x, 6), round(y, 6), 0.0, round(float(rng.uniform(-math.pi, math.pi)), 6))
    return None


def _make_task(rng, layout: RoomLayout, task_id: str, split: str, pair, success_radius: float):
    (oa, sa, ta), (ob, sb, tb) = pair
    tmpl_a = layout.template_by_category(oa)
    tmpl_b = layout.template_by_category(ob)
    taken = [(t.park_pose.x, t.park_pose.y, t.footprint_radius) for t in layout.catalog
             if t.id not in (tmpl_a.id, tmpl_b.id)]
    start_a = _sample_in_region(rng, layout, sa, tmpl_a.footprint_radius, taken)
    if start_a is None:
        return None
    taken.append((start_a.x, start_a.y, tmpl_a.footprint_radius))
    start_b = _sample_in_region(rng, layout, sb, tmpl_b.footprint_radius, taken)
    if start_b is None:
        return None
    taken.append((start_b.x, start_b.y, tmpl_b.footprint_radius))
    goal_a = _sample_in_region(rng, layout, ta, tmpl_a.footprint_radius, taken[:-2] + [taken[-1]])
    if goal_a is None:
        return None
    others = [t for t in taken[:-2]] + [(goal_a.x, goal_a.y, tmpl_a.footprint_radius)]
    goal_b = _sample_in_region(rng, layout, tb, tmpl_b.footprint_radius, others)
    if goal_b is None:
        return None
    for s, g in ((start_a, goal_a), (start_b, goal_b)):
        if math.hypot(s.x - g.x, s.y - g.y) < 1.0:
            return None

    # during sub-task 1 object B waits at its start; during sub-task 2 object A sits at its goal
    guides_a = compute_guides(layout, start_a, goal_a, scene_discs(layout, {tmpl_b.id: start_b}, tmpl_a.id))
    guides_b = compute_guides(layout, start_b, goal_b, scene_discs(layout, {tmpl_a.id: goal_a}, tmpl_b.id))
    subs = []
    for tmpl, start, goal, guides, (o, s, t) in (
        (tmpl_a, start_a, goal_a, guides_a, pair[0]),
        (tmpl_b, start_b, goal_b, guides_b, pair[1]),
    ):
        text = f"Move the {object_name(o)} from the {region_name(s)} to the {region_name(t)}."
        subs.append(SubTask(tmpl.id, start, GoalSpec(tmpl.id, goal, guides, success_radius),
                            InstructionSpec(o, s, t, text)))
    return TaskSpec(task_id, layout.id, tuple(subs), split)


def _triples(layout: RoomLayout):
    out = []
    for t in layout.catalog:
        for s in layout.regions:
            for g in layout.regions:
                if s.token != g.token:
                    out.append((t.category, s.token, g.token))
    return out


def _compatible(a, b) -> bool:
    (oa, sa, ta), (ob, sb, tb) = a, b
    return oa != ob and sa != sb and ta != tb and ta != sb


def generate_dataset(layouts: Sequence[RoomLayout], n_train: int, n_unseen: int, seed: int,
                     success_radius: float = 0.5, unseen_fraction: float = 0.25) -> list[TaskSpec]:
    """Generate ``n_train + n_unseen`` two-object tasks spread evenly over ``layouts``.

    Unseen tasks only use (object, source region, target region) triples that
    never occur in the training split.
    """
    layouts = list(layouts)
    if not layouts:
        raise ValueError("no layouts given")
    for layout in layouts:
        check_layout(layout)
    if n_train < 0 or n_unseen < 0:
        raise ValueError("task counts must be nonnegative")
    rng = np.random.default_rng(seed)

    pools = {}
    for layout in layouts:
        triples = _triples(layout)
        order = rng.permutation(len(triples))
        n_hold = max(2, int(round(unseen_fraction * len(triples))))
        unseen = [triples[i] for i in sorted(order[:n_hold])]
        train = [triples[i] for i in sorted(order[n_hold:])]
        pools[layout.id] = {"train": train, "unseen": unseen}

    tasks = []
    for split, count in (("train", n_train), ("unseen", n_unseen)):
        for k in range(count):
            layout = layouts[k % len(layouts)]
            pool = pools[layout.id][split]
            task = None
            for _ in range(2000):
                a = pool[rng.integers(len(pool))]
                b = pool[rng.integers(len(pool))]
                if not _compatible(a, b):
                    continue
                task = _make_task(rng, layout, f"{layout.id}-{split}-{k:04d}", split, (a, b), success_radius)
                if task is not None:
                    break
            if task is None:
                raise RuntimeError(f"could not sample a {split} task for layout {layout.id!r}")
            tasks.append(task)
    return tasks


def default_spawn(layout: RoomLayout) -> AgentState:
    return spawn_agent(layout.spawn.x, layout.spawn.y, layout.spawn.yaw, torso_height=0.9)


def spawn_agent(x, y, yaw, torso_height=0.9, standing=True) -> AgentState:
    root = Pose2Z(x, y, torso_height, yaw)
    hands = []
    for ox, oy, oz in REST_OFFSETS:
        wx, wy = rot(root.yaw, ox, oy)
        hands.append((x + wx, y + wy, torso_height + oz))
    return AgentState(root=root, hand_left=hands[0], hand_right=hands[1], standing=standing)


def _post_first_spawn(task: TaskSpec, layout: RoomLayout, body_radius=0.25) -> AgentState:
    rng = np.random.default_rng(zlib.crc32(task.id.encode()))
    g = task.sub_tasks[0].goal.goal_pose
    poses = {s.object_id: s.start_pose for s in task.sub_tasks}
    discs = list(layout.obstacle_discs())
    for t in layout.catalog:
        p = poses.get(t.id, t.park_pose)
        discs.append((p.x, p.y, t.footprint_radius))
    x0, y0, x1, y1 = layout.bounds
    for _ in range(500):
        r = rng.uniform(0.5, SPAWN_RADIUS)
        a = rng.uniform(-math.pi, math.pi)
        x, y = g.x + r * math.cos(a), g.y + r * math.sin(a)
        if not (x0 + body_radius <= x <= x1 - body_radius and y0 + body_radius <= y <= y1 - body_radius):
            continue
        if all(math.hypot(x - dx, y - dy) >= dr + body_radius + 0.05 for dx, dy, dr in discs):
            yaw = float(rng.uniform(-math.pi, math.pi))
            return spawn_agent(round(x, 6), round(y, 6), round(yaw, 6))
    raise RuntimeError(f"task {task.id}: no free spawn near the first goal")


def split_pretraining(tasks: Sequence[TaskSpec]) -> list[SingleTask]:
    """Split each two-object task into its two single-object tasks.

    The first half keeps the layout's default spawn; the second half spawns
    the agent (upright) within 1 m of the first sub-task's goal.
    """
    out = []
    for task in tasks:
        if len(task.sub_tasks) != 2:
            raise ValueError(f"task {task.id}: expected 2 sub-tasks")
        layout = get_layout(task.layout)
        out.append(SingleTask(task, 0, None))
        out.append(SingleTask(task, 1, _post_first_spawn(task, layout)))
    return out
