"""Procedural room layouts.

Each of the four standard rooms is generated from a fixed seed and validated
(everything reachable, regions well separated). The generator is pure, so the
same seed always yields the same room.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..sim import nav
from ..sim.state import Obstacle, Pose2Z

LAYOUT_IDS = ("bedroom", "kitchen", "living_room", "warehouse")

_VOCAB = {
    "bedroom": (
        ("laptop", "chair", "lamp", "suitcase"),
        ("bed", "desk", "wardrobe", "nightstand"),
    ),
    "kitchen": (
        ("coffeemaker", "trashbin", "kettle", "stool"),
        ("kitchen island", "countertop", "sink", "fridge"),
    ),
    "living_room": (
        ("plant", "vase", "armchair", "speaker"),
        ("tv cabinet", "coffee table", "sofa", "console table"),
    ),
    "warehouse": (
        ("small box", "large box", "crate", "barrel"),
        ("left shelf", "right shelf", "loading dock", "pallet"),
    ),
}

LAYOUT_SEEDS = {"bedroom": 11, "kitchen": 23, "living_room": 37, "warehouse": 41}

N_CATEGORIES = sum(len(v[0]) for v in _VOCAB.values())
N_REGIONS = sum(len(v[1]) for v in _VOCAB.values())
POINTS_PER_OBJECT = 16


@dataclass(frozen=True)
class Region:
    token: int
    name: str
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class ObjectTemplate:
    id: int
    category: int
    name: str
    footprint_radius: float
    height: float
    park_pose: Pose2Z

    def point_cloud(self) -> np.ndarray:
        return make_point_cloud(self.footprint_radius, self.height)


@dataclass(frozen=True)
class RoomLayout:
    id: str
    bounds: tuple
    obstacles: tuple
    catalog: tuple
    regions: tuple
    spawn: Pose2Z

    def region(self, token: int) -> Region:
        for r in self.regions:
            if r.token == token:
                return r
        raise KeyError(f"layout {self.id} has no region token {token}")

    def template(self, oid: int) -> ObjectTemplate:
        for t in self.catalog:
            if t.id == oid:
                return t
        raise KeyError(f"layout {self.id} has no object {oid}")

    def template_by_category(self, category: int) -> ObjectTemplate:
        for t in self.catalog:
            if t.category == category:
                return t
        raise KeyError(f"layout {self.id} has no category {category}")

    def obstacle_discs(self) -> tuple:
        return tuple((o.x, o.y, o.radius) for o in self.obstacles)


def make_point_cloud(radius: float, height: float, n: int = POINTS_PER_OBJECT) -> np.ndarray:
    """Two rings (mid-height and top) on the object's bounding cylinder."""
    half = n // 2
    ang = np.arange(half) * (2 * np.pi / half)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    mid = np.column_stack([ring, np.full(half, 0.5 * height)])
    top = np.column_stack([ring, np.full(half, height)])
    pc = np.vstack([mid, top])
    pc.flags.writeable = False
    return pc


def _free(x, y, clearance, placed):
    return all(math.hypot(x - px, y - py) >= clearance + pr for px, py, pr in placed)


def _build(layout_id: str, seed: int) -> RoomLayout | None:
    rng = np.random.default_rng(seed)
    li = LAYOUT_IDS.index(layout_id)
    obj_names, region_names = _VOCAB[layout_id]
    W = float(np.round(rng.uniform(6.5, 7.5), 2))
    H = float(np.round(rng.uniform(6.5, 7.5), 2))
    bounds = (0.0, 0.0, W, H)
    cx, cy = W / 2, H / 2

    # four wall-side pieces (one per wall, they anchor the regions) + one centre piece
    furniture = []
    for wall in range(4):
        r = float(rng.uniform(0.4, 0.7))
        t = float(rng.uniform(0.3, 0.7))
        if wall == 0:
            x, y = t * W, r + 0.05
        elif wall == 1:
            x, y = W - r - 0.05, t * H
        elif wall == 2:
            x, y = (1 - t) * W, H - r - 0.05
        else:
            x, y = r + 0.05, (1 - t) * H
        furniture.append((x, y, r))
    r = float(rng.uniform(0.3, 0.45))
    furniture.append((cx + float(rng.uniform(-0.6, 0.6)), cy + float(rng.uniform(-0.6, 0.6)), r))
    # sanity: pieces well apart
    for a in range(len(furniture)):
        for b in range(a + 1, len(furniture)):
            xa, ya, ra = furniture[a]
            xb, yb, rb = furniture[b]
            if math.hypot(xa - xb, ya - yb) < ra + rb + 1.6:
                return None

    regions = []
    for k in range(4):
        fx, fy, fr = furniture[k]
        ux, uy = cx - fx, cy - fy
        n = math.hypot(ux, uy)
        ux, uy = ux / n, uy / n
        d = fr + 0.75
        regions.append(Region(li * 4 + k, region_names[k], fx + d * ux, fy + d * uy, 0.5))
    for a in range(4):
        for b in range(a + 1, 4):
            if math.hypot(regions[a].x - regions[b].x, regions[a].y - regions[b].y) < 2.2:
                return None
    for reg in regions:
        if not _free(reg.x, reg.y, 0.75, [furniture[4]]):
            return None

    # spawn and parking spots sampled in free space away from regions
    placed = list(furniture) + [(r.x, r.y, r.radius + 0.3) for r in regions]
    spawn = None
    for _ in range(200):
        x, y = float(rng.uniform(1.0, W - 1.0)), float(rng.uniform(1.0, H - 1.0))
        if _free(x, y, 0.8, placed):
            spawn = Pose2Z(x, y, 0.0, math.atan2(cy - y, cx - x))
            break
    if spawn is None:
        return None
    placed.append((spawn.x, spawn.y, 0.6))

    catalog = []
    for k in range(4):
        fr = float(np.round(rng.uniform(0.15, 0.26), 3))
        h = float(np.round(rng.uniform(0.35, 0.75), 3))
        pose = None
        for _ in range(400):
            x, y = float(rng.uniform(0.5, W - 0.5)), float(rng.uniform(0.5, H - 0.5))
            if _free(x, y, fr + 0.45, placed):
                pose = Pose2Z(x, y, 0.0, float(rng.uniform(-math.pi, math.pi)))
                break
        if pose is None:
            return None
        placed.append((pose.x, pose.y, fr + 0.2))
        catalog.append(ObjectTemplate(k, li * 4 + k, obj_names[k], fr, h, pose))

    obstacles = tuple(Obstacle(x, y, r) for x, y, r in furniture)
    layout = RoomLayout(layout_id, bounds, obstacles, tuple(catalog), tuple(regions), spawn)
    if not _reachable(layout):
        return None
    return layout


def _reachable(layout: RoomLayout) -> bool:
    cost = nav.cost_map(layout.bounds, layout.obstacle_discs(), 0.25, 0.3)
    free = cost < nav.INFLATED_COST
    pts = [(layout.spawn.x, layout.spawn.y)] + [(r.x, r.y) for r in layout.regions]
    pts += [(t.park_pose.x, t.park_pose.y) for t in layout.catalog]
    start = nav.cell_of(layout.bounds, 0.25, *pts[0])
    if not free[start]:
        return False
    seen = {start}
    stack = [start]
    nx, ny = free.shape
    while stack:
        i, j = stack.pop()
        for di, dj in nav._NEIGHBORS:
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and free[a, b] and (a, b) not in seen:
                seen.add((a, b))
                stack.append((a, b))
    return all(nav.cell_of(layout.bounds, 0.25, *p) in seen for p in pts)


@lru_cache(maxsize=None)
def build_layout(layout_id: str, seed: int) -> RoomLayout:
    """Deterministically generate a valid layout, trying seeds ``seed, seed+1000, ...``."""
    if layout_id not in LAYOUT_IDS:
        raise KeyError(f"unknown layout {layout_id!r}")
    for attempt in range(500):
        layout = _build(layout_id, seed + 1000 * attempt)
        if layout is not None:
            return layout
    raise RuntimeError(f"could not generate layout {layout_id!r} from seed {seed}")


def get_layout(layout_id: str) -> RoomLayout:
    return build_layout(layout_id, LAYOUT_SEEDS[layout_id])


def standard_layouts() -> list[RoomLayout]:
    return [get_layout(i) for i in LAYOUT_IDS]


def object_name(category: int) -> str:
    li, k = divmod(category, 4)
    return _VOCAB[LAYOUT_IDS[li]][0][k]


def region_name(token: int) -> str:
    li, k = divmod(token, 4)
    return _VOCAB[LAYOUT_IDS[li]][1][k]
