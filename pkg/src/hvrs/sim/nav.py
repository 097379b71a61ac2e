"""Occupancy-grid shortest paths.

Obstacles are soft: cells inside an inflated disc cost more to cross and cells
inside the disc itself cost much more, so a path always exists and hugs free
space whenever free space connects start and goal.
"""
from __future__ import annotations

import heapq
import math
from functools import lru_cache

import numpy as np

INFLATED_COST = 8.0
BLOCKED_COST = 100.0
_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def grid_shape(bounds, cell):
    x0, y0, x1, y1 = bounds
    return max(1, int(math.ceil((x1 - x0) / cell))), max(1, int(math.ceil((y1 - y0) / cell)))


def cell_of(bounds, cell, x, y):
    nx, ny = grid_shape(bounds, cell)
    i = min(nx - 1, max(0, int((x - bounds[0]) / cell)))
    j = min(ny - 1, max(0, int((y - bounds[1]) / cell)))
    return i, j


def cell_center(bounds, cell, i, j):
    return bounds[0] + (i + 0.5) * cell, bounds[1] + (j + 0.5) * cell


@lru_cache(maxsize=256)
def cost_map(bounds, discs, cell, inflate):
    """Per-cell traversal multiplier; ``discs`` is a tuple of (x, y, r)."""
    nx, ny = grid_shape(bounds, cell)
    xs = bounds[0] + (np.arange(nx) + 0.5) * cell
    ys = bounds[1] + (np.arange(ny) + 0.5) * cell
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    cost = np.ones((nx, ny))
    # keep the agent body off the walls
    wall = np.minimum.reduce([gx - bounds[0], bounds[2] - gx, gy - bounds[1], bounds[3] - gy])
    cost[wall < inflate] = INFLATED_COST
    for x, y, r in discs:
        d = np.hypot(gx - x, gy - y)
        cost[d < r + inflate] = np.maximum(cost[d < r + inflate], INFLATED_COST)
        cost[d < r] = BLOCKED_COST
    cost.flags.writeable = False
    return cost


@lru_cache(maxsize=4096)
def distance_field(bounds, discs, cell, inflate, target_cell):
    """Dijkstra cost-to-go from every cell to ``target_cell`` (8-connected)."""
    cost = cost_map(bounds, discs, cell, inflate)
    nx, ny = cost.shape
    dist = np.full((nx, ny), np.inf)
    ti, tj = target_cell
    dist[ti, tj] = 0.0
    heap = [(0.0, ti, tj)]
    cl = cost.tolist()
    dl = dist.tolist()
    while heap:
        d, i, j = heapq.heappop(heap)
        if d > dl[i][j]:
            continue
        for di, dj in _NEIGHBORS:
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny:
                step = (1.4142135623730951 if di and dj else 1.0) * 0.5 * (cl[i][j] + cl[a][b])
                nd = d + step
                if nd < dl[a][b]:
                    dl[a][b] = nd
                    heapq.heappush(heap, (nd, a, b))
    out = np.array(dl)
    out.flags.writeable = False
    return out


def descend(field: np.ndarray, start_cell, n_cells: int):
    """Follow the steepest descent of ``field`` for up to ``n_cells`` moves."""
    i, j = start_cell
    nx, ny = field.shape
    path = [(i, j)]
    for _ in range(n_cells):
        best, best_v = None, field[i, j]
        for di, dj in _NEIGHBORS:
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and field[a, b] < best_v:
                best, best_v = (a, b), field[a, b]
        if best is None:
            break
        i, j = best
        path.append(best)
    return path


def _key(discs, nd=2):
    return tuple((round(x, nd), round(y, nd), round(r, nd)) for x, y, r in discs)


def shortest_path(bounds, discs, start, goal, cell=0.25, inflate=0.45):
    """Cell-center polyline from ``start`` to ``goal`` (both xy)."""
    bounds = tuple(float(b) for b in bounds)
    tc = cell_of(bounds, cell, *goal)
    field = distance_field(bounds, _key(discs), cell, inflate, tc)
    cells = descend(field, cell_of(bounds, cell, *start), field.size)
    pts = [tuple(start)] + [cell_center(bounds, cell, i, j) for i, j in cells[1:]]
    pts.append(tuple(goal))
    return pts


def waypoint(bounds, discs, start, goal, cell=0.25, inflate=0.45, lookahead=4):
    """Point ~``lookahead`` cells along the shortest path from start toward goal."""
    bounds = tuple(float(b) for b in bounds)
    tc = cell_of(bounds, cell, *goal)
    sc = cell_of(bounds, cell, *start)
    if sc == tc:
        return tuple(goal)
    field = distance_field(bounds, _key(discs), cell, inflate, tc)
    cells = descend(field, sc, lookahead)
    if cells[-1] == tc:
        return tuple(goal)
    return cell_center(bounds, cell, *cells[-1])


def resample_polyline(points, spacing: float = 1.0):
    """Points every ``spacing`` meters of arc length; the last point is kept."""
    pts = [tuple(map(float, p)) for p in points]
    if len(pts) < 2:
        return pts
    arr = np.asarray(pts)
    seg = np.hypot(*np.diff(arr, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    out = [pts[0]]
    s = spacing
    while s < total - 1e-9:
        k = int(np.searchsorted(cum, s, side="right")) - 1
        t = (s - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        out.append(tuple(float(v) for v in arr[k] + t * (arr[k + 1] - arr[k])))
        s += spacing
    if math.hypot(out[-1][0] - pts[-1][0], out[-1][1] - pts[-1][1]) > 1e-9:
        out.append(pts[-1])
    return out


def segment_clear(a, b, discs, margin: float) -> bool:
    """True when segment a-b stays at least ``margin`` away from every disc."""
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    for x, y, r in discs:
        if L2 == 0.0:
            t = 0.0
        else:
            t = max(0.0, min(1.0, ((x - ax) * dx + (y - ay) * dy) / L2))
        px, py = ax + t * dx, ay + t * dy
        if math.hypot(x - px, y - py) < r + margin:
            return False
    return True
