"""Synthetic radio maps and a raw-cell Dijkstra oracle shared by planner tests."""

import heapq
import itertools
import math

import numpy as np

from uavcc.core import Aabb, Vec3
from uavcc.radio import RadioMap

FEASIBLE_DB = 10.0
INFEASIBLE_DB = -10.0


def map_from_mask(feasible, serving=None, res=1.0, gamma=0.0):
    """RadioMap whose SINR is +/-10 dB according to a boolean feasibility mask."""
    feasible = np.asarray(feasible, dtype=bool)
    vals = np.where(feasible, FEASIBLE_DB, INFEASIBLE_DB).astype(float)
    if serving is None:
        serving = np.zeros(feasible.shape, dtype=np.int64)
    blocked = np.zeros(feasible.shape, dtype=bool)
    nx, ny, nz = feasible.shape
    bounds = Aabb(Vec3(0, 0, 0), Vec3(nx * res, ny * res, nz * res))
    return RadioMap(Vec3(0, 0, 0), res, vals, np.asarray(serving, dtype=np.int64),
                    blocked, gamma, bounds)


def random_map(seed, max_side=14, n_holes=4, two_stations=True):
    """Random feasibility mask with box-shaped holes; serving split by a plane."""
    rng = np.random.default_rng(seed)
    nx = int(rng.integers(6, max_side + 1))
    ny = int(rng.integers(6, max_side + 1))
    nz = int(rng.integers(2, 5))
    feasible = np.ones((nx, ny, nz), dtype=bool)
    for _ in range(n_holes):
        sx = int(rng.integers(1, max(2, nx // 3)))
        sy = int(rng.integers(1, max(2, ny // 3)))
        sz = int(rng.integers(1, nz + 1))
        x0 = int(rng.integers(0, nx - sx + 1))
        y0 = int(rng.integers(0, ny - sy + 1))
        z0 = int(rng.integers(0, nz - sz + 1))
        feasible[x0 : x0 + sx, y0 : y0 + sy, z0 : z0 + sz] = False
    serving = np.zeros((nx, ny, nz), dtype=np.int64)
    if two_stations:
        split = int(rng.integers(1, nx))
        serving[split:, :, :] = 1
    return map_from_mask(feasible, serving)


_OFFSETS = [off for off in itertools.product((-1, 0, 1), repeat=3) if off != (0, 0, 0)]


def cell_dijkstra_length(radio_map, start_cell, goal_cell):
    """Shortest feasible-cell path length (m), 26-connectivity, Euclidean costs."""
    feasible = radio_map.feasible()
    res = radio_map.resolution_m
    nx, ny, nz = feasible.shape
    if not feasible[start_cell] or not feasible[goal_cell]:
        return None
    dist = {start_cell: 0.0}
    heap = [(0.0, start_cell)]
    while heap:
        d, cell = heapq.heappop(heap)
        if cell == goal_cell:
            return d * res
        if d > dist.get(cell, math.inf):
            continue
        cx, cy, cz = cell
        for ox, oy, oz in _OFFSETS:
            nxt = (cx + ox, cy + oy, cz + oz)
            if not (0 <= nxt[0] < nx and 0 <= nxt[1] < ny and 0 <= nxt[2] < nz):
                continue
            if not feasible[nxt]:
                continue
            nd = d + math.sqrt(ox * ox + oy * oy + oz * oz)
            if nd < dist.get(nxt, math.inf):
                dist[nxt] = nd
                heapq.heappush(heap, (nd, nxt))
    return None


def polyline_length(points):
    return sum(b.distance_to(a) for a, b in zip(points[:-1], points[1:]))


def feasible_cell_centers(radio_map):
    cells = np.argwhere(radio_map.feasible())
    return [tuple(c) for c in cells]
