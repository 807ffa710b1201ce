"""Pre-flight strategic planning over the SINR-feasible free space.

The feasible cell set (SINR >= threshold, outside buildings) is tiled
exactly by greedy axis-aligned boxes, connected through shared-face
portals, and searched with Dijkstra under a cost that mixes travel length,
serving-station changes, and low-margin-SINR risk. The resulting waypoint
chain is then time-parameterized with a trapezoidal speed profile.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Aabb, ValidationError, Vec3
from .dynamics import PlantModel
from .radio import RadioMap

__all__ = [
    "PlanError",
    "InfeasiblePlanError",
    "NoRouteError",
    "Region",
    "RegionGraph",
    "ReferenceTrajectory",
    "RefSegment",
    "decompose_regions",
    "plan_path",
    "refine_trajectory",
]


class PlanError(Exception):
    """Base class for planning failures."""


class InfeasiblePlanError(PlanError):
    """Start or goal lies outside the navigation-feasible region."""


class NoRouteError(PlanError):
    """Start and goal are feasible but not connected in the region graph."""


@dataclass(frozen=True)
class Region:
    """Axis-aligned box of contiguous feasible grid cells."""

    id: int
    box: Aabb
    cell_lo: tuple[int, int, int]
    cell_hi: tuple[int, int, int]  # inclusive
    min_sinr_db: float
    modal_serving_bs: int

    def centroid(self) -> Vec3:
        return self.box.center()

    def cell_count(self) -> int:
        return (
            (self.cell_hi[0] - self.cell_lo[0] + 1)
            * (self.cell_hi[1] - self.cell_lo[1] + 1)
            * (self.cell_hi[2] - self.cell_lo[2] + 1)
        )


@dataclass(frozen=True)
class Portal:
    """Shared face rectangle between two adjacent regions."""

    a: int
    b: int
    axis: int          # face normal axis
    rect: Aabb         # degenerate along `axis`

    def center(self) -> Vec3:
        return self.rect.center()


class RegionGraph:
    """Regions, their face adjacency, and a cell-to-region index grid."""

    def __init__(self, regions: list[Region], portals: list[Portal], region_id_grid: np.ndarray,
                 origin: Vec3, resolution_m: float):
        self.regions = regions
        self.portals = {}
        self.adjacency: dict[int, list[int]] = {r.id: [] for r in regions}
        for p in portals:
            self.portals[(p.a, p.b)] = p
            self.portals[(p.b, p.a)] = p
            self.adjacency[p.a].append(p.b)
            self.adjacency[p.b].append(p.a)
        for nbrs in self.adjacency.values():
            nbrs.sort()
        region_id_grid.setflags(write=False)
        self.region_id_grid = region_id_grid
        self.origin = origin
        self.resolution_m = resolution_m

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted({(min(a, b), max(a, b)) for (a, b) in self.portals})

    def region_of_point(self, p: Vec3) -> int | None:
        """Region id of the cell containing p, or None when infeasible."""
        r = self.resolution_m
        nx, ny, nz = self.region_id_grid.shape
        ix = int((p.x - self.origin.x) / r)
        iy = int((p.y - self.origin.y) / r)
        iz = int((p.z - self.origin.z) / r)
        if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
            return None
        rid = int(self.region_id_grid[ix, iy, iz])
        return rid if rid >= 0 else None


def _modal_serving(serving: np.ndarray) -> int:
    ids, counts = np.unique(serving, return_counts=True)
    best = counts.max()
    return int(ids[counts == best].min())  # tie to lowest id


def decompose_regions(radio_map: RadioMap) -> RegionGraph:
    """Tile the feasible cell set with greedily grown axis-aligned boxes.

    Seeds at the lexicographically first uncovered feasible cell and grows
    along +x, +y, +z in round robin while every newly covered cell is
    feasible and uncovered, so the boxes partition the feasible set exactly.
    Edges connect boxes that share a face with positive overlap area.
    """
    feasible = radio_map.feasible()
    nx, ny, nz = feasible.shape
    covered = np.zeros_like(feasible)
    region_id_grid = np.full(feasible.shape, -1, dtype=np.int64)
    res = radio_map.resolution_m
    o = radio_map.origin

    regions: list[Region] = []
    remaining = np.argwhere(feasible)
    cursor = 0
    while True:
        while cursor < len(remaining):
            ix, iy, iz = remaining[cursor]
            if not covered[ix, iy, iz]:
                break
            cursor += 1
        else:
            break
        x0 = x1 = int(remaining[cursor][0])
        y0 = y1 = int(remaining[cursor][1])
        z0 = z1 = int(remaining[cursor][2])

        growing = True
        while growing:
            growing = False
            if x1 + 1 < nx:
                slab = feasible[x1 + 1, y0 : y1 + 1, z0 : z1 + 1] & ~covered[x1 + 1, y0 : y1 + 1, z0 : z1 + 1]
                if slab.all():
                    x1 += 1
                    growing = True
            if y1 + 1 < ny:
                slab = feasible[x0 : x1 + 1, y1 + 1, z0 : z1 + 1] & ~covered[x0 : x1 + 1, y1 + 1, z0 : z1 + 1]
                if slab.all():
                    y1 += 1
                    growing = True
            if z1 + 1 < nz:
                slab = feasible[x0 : x1 + 1, y0 : y1 + 1, z1 + 1] & ~covered[x0 : x1 + 1, y0 : y1 + 1, z1 + 1]
                if slab.all():
                    z1 += 1
                    growing = True

        rid = len(regions)
        covered[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1] = True
        region_id_grid[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1] = rid
        box = Aabb(
            Vec3(o.x + x0 * res, o.y + y0 * res, o.z + z0 * res),
            Vec3(o.x + (x1 + 1) * res, o.y + (y1 + 1) * res, o.z + (z1 + 1) * res),
        )
        cells_sinr = radio_map.sinr_db[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1]
        cells_serving = radio_map.serving_bs[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1]
        regions.append(
            Region(
                id=rid,
                box=box,
                cell_lo=(x0, y0, z0),
                cell_hi=(x1, y1, z1),
                min_sinr_db=float(cells_sinr.min()),
                modal_serving_bs=_modal_serving(cells_serving),
            )
        )

    portals = _face_portals(regions, o, res)
    return RegionGraph(regions, portals, region_id_grid, o, res)


def _face_portals(regions: list[Region], origin: Vec3, res: float) -> list[Portal]:
    """Find all positive-area shared faces by grouping regions per face plane."""
    by_plane: dict[tuple[int, int], list[tuple[int, Region]]] = {}
    for r in regions:
        for axis in range(3):
            # (axis, plane) where plane is the cell index just past the high face
            by_plane.setdefault((axis, r.cell_hi[axis] + 1), []).append((+1, r))
            by_plane.setdefault((axis, r.cell_lo[axis]), []).append((-1, r))

    o = origin.as_array()
    portals: list[Portal] = []
    seen: set[tuple[int, int]] = set()
    for (axis, plane), entries in by_plane.items():
        highs = [r for side, r in entries if side == +1]
        lows = [r for side, r in entries if side == -1]
        for ra in highs:
            for rb in lows:
                if ra.id == rb.id or (min(ra.id, rb.id), max(ra.id, rb.id)) in seen:
                    continue
                lo = [0.0, 0.0, 0.0]
                hi = [0.0, 0.0, 0.0]
                ok = True
                for ax in range(3):
                    if ax == axis:
                        coord = o[ax] + plane * res
                        lo[ax] = hi[ax] = coord
                        continue
                    a0, a1 = ra.cell_lo[ax], ra.cell_hi[ax]
                    b0, b1 = rb.cell_lo[ax], rb.cell_hi[ax]
                    c0, c1 = max(a0, b0), min(a1, b1)
                    if c0 > c1:  # no overlap in this face dimension
                        ok = False
                        break
                    lo[ax] = o[ax] + c0 * res
                    hi[ax] = o[ax] + (c1 + 1) * res
                if not ok:
                    continue
                seen.add((min(ra.id, rb.id), max(ra.id, rb.id)))
                portals.append(
                    Portal(
                        a=min(ra.id, rb.id),
                        b=max(ra.id, rb.id),
                        axis=axis,
                        rect=Aabb(Vec3(*lo), Vec3(*hi)),
                    )
                )
    return portals


def _transition_penalty(
    src: Region, dst: Region, w_handover: float, w_risk: float, gamma_margin_db: float
) -> float:
    handover = 1.0 if src.modal_serving_bs != dst.modal_serving_bs else 0.0
    risk = max(0.0, gamma_margin_db - dst.min_sinr_db)
    return w_handover * handover + w_risk * risk


def _portal_sample_points(portal: Portal, shrink: float) -> list[Vec3]:
    """Candidate crossing points: center, corners, and edge midpoints of the shrunk rect."""
    lo = portal.rect.min.as_array().copy()
    hi = portal.rect.max.as_array().copy()
    for ax in range(3):
        if ax == portal.axis:
            continue
        if hi[ax] - lo[ax] > 2.0 * shrink:
            lo[ax] += shrink
            hi[ax] -= shrink
        else:
            mid = 0.5 * (lo[ax] + hi[ax])
            lo[ax] = hi[ax] = mid
    u, v = [ax for ax in range(3) if ax != portal.axis]
    pts: list[tuple[float, float, float]] = []
    mid = 0.5 * (lo + hi)
    for fu in (lo[u], mid[u], hi[u]):
        for fv in (lo[v], mid[v], hi[v]):
            p = mid.copy()
            p[u] = fu
            p[v] = fv
            pts.append((p[0], p[1], p[2]))
    return [Vec3(*t) for t in dict.fromkeys(pts)]


def _region_route(
    graph: RegionGraph,
    rid_start: int,
    rid_goal: int,
    start: Vec3,
    goal: Vec3,
    w_dist: float,
    w_handover: float,
    w_risk: float,
    gamma_margin_db: float,
) -> tuple[float, tuple[int, ...]]:
    """Dijkstra over sampled portal crossings; returns (cost, region-id sequence).

    The travel term chains straight legs start -> crossing samples -> goal,
    where each portal offers up to nine candidate crossing points, so the
    search tracks the geometric shortest chain closely. Each region
    transition also pays the handover indicator and the low-SINR-margin risk
    of the region being entered. Cost ties resolve to the lexicographically
    smallest region-id sequence.
    """
    regions = graph.regions
    shrink = 0.5 * graph.resolution_m
    samples: dict[tuple[int, int], list[Vec3]] = {}
    for (a, b), portal in graph.portals.items():
        if a < b:
            samples[(a, b)] = _portal_sample_points(portal, shrink)

    # state: crossed into region path[-1] at sample point index `si` of portal (prev, node)
    heap: list[tuple[float, tuple[int, ...], tuple[float, float, float], int]] = [
        (0.0, (rid_start,), (start.x, start.y, start.z), -1)
    ]
    settled: dict[tuple[int, int, int], tuple[float, tuple[int, ...]]] = {}
    best_goal: tuple[float, tuple[int, ...]] | None = None
    while heap:
        cost, path, pt, si = heapq.heappop(heap)
        node = path[-1]
        if best_goal is not None and (cost, path) >= best_goal:
            break
        if node == rid_goal:
            total = cost + w_dist * Vec3(*pt).distance_to(goal)
            cand = (total, path)
            if best_goal is None or cand < best_goal:
                best_goal = cand
            continue
        prev = path[-2] if len(path) > 1 else -1
        state = (prev, node, si)
        if state in settled and settled[state] <= (cost, path):
            continue
        settled[state] = (cost, path)
        p = Vec3(*pt)
        for nbr in graph.adjacency[node]:
            pen = _transition_penalty(regions[node], regions[nbr], w_handover, w_risk, gamma_margin_db)
            key = (min(node, nbr), max(node, nbr))
            for j, q in enumerate(samples[key]):
                c = cost + w_dist * p.distance_to(q) + pen
                nstate = (node, nbr, j)
                if nstate in settled and settled[nstate] <= (c, path + (nbr,)):
                    continue
                heapq.heappush(heap, (c, path + (nbr,), (q.x, q.y, q.z), j))
    if best_goal is None:
        raise NoRouteError(f"no region route from region {rid_start} to region {rid_goal}")
    return best_goal


def plan_path(
    graph: RegionGraph,
    start: Vec3,
    goal: Vec3,
    w_dist: float,
    w_handover: float,
    w_risk: float,
    radio_map: RadioMap,
    gamma_margin_db: float | None = None,
) -> list[Vec3]:
    """Shortest region-graph route from start to goal, expanded to waypoints.

    The route cost per transition is w_dist * (straight-leg length through
    portal centers) + w_handover * [serving station changes] + w_risk *
    max(0, margin - min SINR of the entered region). Crossing points are
    then relaxed toward the shortest polyline through the chosen portal
    sequence, and each crossing contributes an entry/exit waypoint pair half
    a cell either side of the face, which keeps interpolated SINR along the
    whole polyline inside the feasible band.
    """
    if gamma_margin_db is None:
        gamma_margin_db = radio_map.gamma_th_db + 3.0

    rid_start = graph.region_of_point(start)
    rid_goal = graph.region_of_point(goal)
    if rid_start is None or rid_goal is None:
        raise InfeasiblePlanError(
            f"start region={rid_start} goal region={rid_goal}: both endpoints must lie in feasible space"
        )

    if rid_start == rid_goal:
        return [start, goal]

    _, region_path = _region_route(
        graph, rid_start, rid_goal, start, goal, w_dist, w_handover, w_risk, gamma_margin_db
    )
    return _string_waypoints(graph, region_path, start, goal)


def _string_waypoints(
    graph: RegionGraph, region_path: tuple[int, ...], start: Vec3, goal: Vec3
) -> list[Vec3]:
    res = graph.resolution_m
    half = 0.5 * res
    portals = [
        graph.portals[(region_path[i], region_path[i + 1])]
        for i in range(len(region_path) - 1)
    ]
    # coordinate descent toward the shortest chain through the portal rects
    crossings = [p.center() for p in portals]
    for _ in range(40):
        moved = 0.0
        for i, portal in enumerate(portals):
            prev_pt = start if i == 0 else crossings[i - 1]
            next_pt = goal if i == len(portals) - 1 else crossings[i + 1]
            q = _portal_crossing_point(portal, prev_pt, next_pt, half)
            moved = max(moved, q.distance_to(crossings[i]))
            crossings[i] = q
        if moved < 1e-9:
            break

    waypoints = [start]
    for idx, portal in enumerate(portals):
        ra = graph.regions[region_path[idx]]
        rb = graph.regions[region_path[idx + 1]]
        q = crossings[idx]
        axis = portal.axis
        plane = portal.rect.min.as_array()[axis]
        # travel direction along the face normal: from ra's side to rb's side
        sign = 1.0 if rb.cell_lo[axis] >= ra.cell_hi[axis] + 1 else -1.0
        enter = q.as_array().copy()
        leave = q.as_array().copy()
        enter[axis] = plane - sign * half
        leave[axis] = plane + sign * half
        waypoints.append(Vec3.from_array(enter))
        waypoints.append(Vec3.from_array(leave))
    waypoints.append(goal)

    # straighten and round across the whole feasible set; dropping or cutting
    # waypoints keeps a subsequence of the routed chain, so serving-side
    # alternations cannot increase
    allowed = graph.region_id_grid >= 0
    origin = graph.origin.as_array()
    waypoints = _shortcut_waypoints(allowed, origin, res, waypoints)
    waypoints = _chamfer_corners(allowed, origin, res, waypoints, rounds=4)
    return waypoints


def _segment_interpolation_safe(
    allowed: np.ndarray, origin: np.ndarray, res: float, a: Vec3, b: Vec3
) -> bool:
    """True when every point of segment a-b interpolates only allowed cells.

    Works in center-lattice coordinates: the corner set of a point changes
    only when a coordinate crosses an integer plane, so checking one point
    per crossing interval is exact. Corner indices clamp at the grid edge
    the same way the SINR lookup clamps its stencil.
    """
    ga = (a.as_array() - origin) / res - 0.5
    gb = (b.as_array() - origin) / res - 0.5
    shape = allowed.shape
    ts = {0.0, 1.0}
    for ax in range(3):
        d = gb[ax] - ga[ax]
        if d == 0.0:
            continue
        lo = math.floor(min(ga[ax], gb[ax])) + 1
        hi = math.floor(max(ga[ax], gb[ax]))
        for m in range(lo, hi + 1):
            t = (m - ga[ax]) / d
            if 0.0 < t < 1.0:
                ts.add(t)
    knots = sorted(ts)
    for t0, t1 in zip(knots[:-1], knots[1:]):
        g = ga + (0.5 * (t0 + t1)) * (gb - ga)
        for dx in (0, 1):
            ix = min(max(math.floor(g[0]) + dx, 0), shape[0] - 1)
            for dy in (0, 1):
                iy = min(max(math.floor(g[1]) + dy, 0), shape[1] - 1)
                for dz in (0, 1):
                    iz = min(max(math.floor(g[2]) + dz, 0), shape[2] - 1)
                    if not allowed[ix, iy, iz]:
                        return False
    return True


def _shortcut_waypoints(
    allowed: np.ndarray, origin: np.ndarray, res: float, pts: list[Vec3]
) -> list[Vec3]:
    """Greedy farthest-visible shortcutting over the safety check."""
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not _segment_interpolation_safe(allowed, origin, res, pts[i], pts[j]):
            j -= 1
        out.append(pts[j])
        i = j
    return out


def _chamfer_corners(
    allowed: np.ndarray, origin: np.ndarray, res: float, pts: list[Vec3], rounds: int
) -> list[Vec3]:
    """Iteratively cut corners so the refine stage can keep speed through turns.

    Each round replaces a corner with two points a quarter of the way into
    the adjacent segments, roughly halving the turn angle; cuts whose new
    segments would leave the allowed cells are skipped. Spread over rounds
    this approximates an arc fillet with plain waypoints.
    """
    for _ in range(rounds):
        if len(pts) < 3:
            return pts
        out = [pts[0]]
        changed = False
        for i in range(1, len(pts) - 1):
            a, b, c = out[-1], pts[i], pts[i + 1]
            d_ab = b.distance_to(a)
            d_bc = c.distance_to(b)
            if d_ab == 0.0 or d_bc == 0.0:
                continue
            cut = 0.25 * min(d_ab, d_bc)
            if cut < 1e-6:
                out.append(b)
                continue
            p = b + (a - b).scaled(cut / d_ab)
            q = b + (c - b).scaled(cut / d_bc)
            if _segment_interpolation_safe(allowed, origin, res, p, q):
                out.append(p)
                out.append(q)
                changed = True
            else:
                out.append(b)
        out.append(pts[-1])
        pts = out
        if not changed:
            break
    return pts


def _portal_crossing_point(portal: Portal, a: Vec3, b: Vec3, shrink: float) -> Vec3:
    """Point of the (shrunk) portal rectangle nearest to segment a-b.

    Shrinking by half a cell per side keeps crossings away from the portal
    rim, where interpolation would mix in cells outside the two regions.
    Degenerate rectangles collapse to their center line or point. The
    minimization is a ternary search over the segment parameter; the
    distance profile to a convex set is unimodal.
    """
    lo = portal.rect.min.as_array().copy()
    hi = portal.rect.max.as_array().copy()
    for ax in range(3):
        if ax == portal.axis:
            continue
        if hi[ax] - lo[ax] > 2.0 * shrink:
            lo[ax] += shrink
            hi[ax] -= shrink
        else:
            mid = 0.5 * (lo[ax] + hi[ax])
            lo[ax] = hi[ax] = mid

    av = a.as_array()
    bv = b.as_array()

    def clamped(t: float) -> np.ndarray:
        p = av + t * (bv - av)
        return np.clip(p, lo, hi)

    def dist2(t: float) -> float:
        p = av + t * (bv - av)
        d = p - clamped(t)
        return float(d @ d)

    t0, t1 = 0.0, 1.0
    for _ in range(80):
        m1 = t0 + (t1 - t0) / 3.0
        m2 = t1 - (t1 - t0) / 3.0
        if dist2(m1) <= dist2(m2):
            t1 = m2
        else:
            t0 = m1
    return Vec3.from_array(clamped(0.5 * (t0 + t1)))


@dataclass(frozen=True)
class RefSegment:
    """Reference window for an MPC solve: rows are slots k+1 .. k+L."""

    positions: np.ndarray  # (L, 3)
    velocities: np.ndarray  # (L, 3)

    def __post_init__(self):
        if self.positions.shape != self.velocities.shape or self.positions.ndim != 2:
            raise ValidationError("reference segment arrays must share an (L, 3) shape")

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Slot-sampled reference: positions and velocities every dt."""

    dt: float
    positions: np.ndarray  # (n, 3)
    velocities: np.ndarray  # (n, 3)

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3 or p.shape != v.shape or p.shape[0] < 1:
            raise ValidationError("trajectory arrays must be (n >= 1, 3) and congruent")
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "velocities", v)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def position_at(self, slot: int) -> Vec3:
        """Reference position at a slot, holding the final point beyond the end."""
        i = min(max(slot, 0), len(self) - 1)
        return Vec3.from_array(self.positions[i])

    def velocity_at(self, slot: int) -> Vec3:
        i = min(max(slot, 0), len(self) - 1)
        if slot >= len(self):
            return Vec3.zero()
        return Vec3.from_array(self.velocities[i])

    def segment(self, start_slot: int, length: int) -> RefSegment:
        """Window for slots start_slot+1 .. start_slot+length, held at the end."""
        idx = np.clip(np.arange(start_slot + 1, start_slot + 1 + length), 0, len(self) - 1)
        pos = self.positions[idx]
        vel = self.velocities[idx].copy()
        vel[np.arange(start_slot + 1, start_slot + 1 + length) >= len(self)] = 0.0
        return RefSegment(positions=pos, velocities=vel)

    def sample_positions(self) -> list[Vec3]:
        return [Vec3.from_array(row) for row in self.positions]


def _merge_close_waypoints(waypoints: list[Vec3], min_spacing: float) -> list[Vec3]:
    if len(waypoints) <= 2 or min_spacing <= 0.0:
        return list(waypoints)
    kept = [waypoints[0]]
    for wp in waypoints[1:-1]:
        if wp.distance_to(kept[-1]) >= min_spacing:
            kept.append(wp)
    goal = waypoints[-1]
    if goal.distance_to(kept[-1]) < min_spacing and len(kept) > 1:
        kept[-1] = goal
    else:
        kept.append(goal)
    return kept


def _corner_speed_limits(points: list[Vec3], cruise: float, budget_dv: float) -> list[float]:
    """Max speed through each interior corner so the turn |dv| fits the budget."""
    limits = [cruise] * len(points)
    limits[0] = 0.0
    limits[-1] = 0.0
    for i in range(1, len(points) - 1):
        d0 = points[i] - points[i - 1]
        d1 = points[i + 1] - points[i]
        n0, n1 = d0.norm(), d1.norm()
        if n0 == 0.0 or n1 == 0.0:
            continue
        cosang = min(1.0, max(-1.0, d0.dot(d1) / (n0 * n1)))
        sin_half = math.sqrt(max(0.0, 0.5 * (1.0 - cosang)))
        if sin_half < 1e-12:
            continue
        limits[i] = min(cruise, budget_dv / (2.0 * sin_half))
    return limits


def refine_trajectory(
    waypoints: list[Vec3],
    model: PlantModel,
    cruise_speed: float,
    min_spacing_m: float = 0.0,
) -> ReferenceTrajectory:
    """Time-parameterize a waypoint chain with a trapezoidal speed profile.

    Acceleration is capped at half of u_max and corner speeds are reduced so
    the velocity jump across a corner fits within the other half, keeping
    every sampled |dv| within u_max * dt. The profile cruises at
    cruise_speed where the geometry allows and comes to a full stop at the
    final waypoint. Waypoints closer together than min_spacing_m are merged
    first.
    """
    if cruise_speed <= 0.0 or cruise_speed > model.v_max:
        raise ValidationError(f"cruise speed must be in (0, v_max], got {cruise_speed}")
    if len(waypoints) < 2:
        raise ValidationError("refine_trajectory needs at least 2 waypoints")

    pts = _merge_close_waypoints(list(waypoints), min_spacing_m)
    pts = [pts[0]] + [p for prev, p in zip(pts[:-1], pts[1:]) if p.distance_to(prev) > 0.0]
    dt = model.dt
    if len(pts) < 2:  # degenerate: start and goal coincide
        one = pts[0].as_array().reshape(1, 3)
        return ReferenceTrajectory(dt=dt, positions=one, velocities=np.zeros((1, 3)))

    accel = 0.5 * model.u_max
    budget_dv = 0.5 * model.u_max * dt
    v_corner = _corner_speed_limits(pts, cruise_speed, budget_dv)

    seg_len = [b.distance_to(a) for a, b in zip(pts[:-1], pts[1:])]
    # forward/backward passes so segment boundary speeds stay reachable
    for i in range(1, len(pts)):
        v_corner[i] = min(v_corner[i], math.sqrt(v_corner[i - 1] ** 2 + 2 * accel * seg_len[i - 1]))
    for i in range(len(pts) - 2, -1, -1):
        v_corner[i] = min(v_corner[i], math.sqrt(v_corner[i + 1] ** 2 + 2 * accel * seg_len[i]))

    # piecewise profile: per segment, (duration, sampler over local time)
    samples_p = [pts[0].as_array()]
    samples_v = [np.zeros(3)]
    t_residual = 0.0  # time already consumed inside the current dt tick

    def emit(seg_dir: np.ndarray, origin: np.ndarray, v0: float, vp: float, v1: float,
             t_acc: float, t_cruise: float, t_dec: float):
        nonlocal t_residual
        total = t_acc + t_cruise + t_dec
        t = dt - t_residual
        while t <= total + 1e-12:
            if t <= t_acc:
                s = v0 * t + 0.5 * accel * t * t
                sp = v0 + accel * t
            elif t <= t_acc + t_cruise:
                s = (v0 * t_acc + 0.5 * accel * t_acc**2) + vp * (t - t_acc)
                sp = vp
            else:
                td = t - t_acc - t_cruise
                s = (v0 * t_acc + 0.5 * accel * t_acc**2) + vp * t_cruise + vp * td - 0.5 * accel * td * td
                sp = vp - accel * td
            samples_p.append(origin + s * seg_dir)
            samples_v.append(max(sp, 0.0) * seg_dir)
            t += dt
        t_residual = total - (t - dt)

    for i, (a, b) in enumerate(zip(pts[:-1], pts[1:])):
        length = seg_len[i]
        direction = (b - a).as_array() / length
        v0, v1 = v_corner[i], v_corner[i + 1]
        # peak speed for a trapezoid of this length between boundary speeds
        vp = min(cruise_speed, math.sqrt((2 * accel * length + v0 * v0 + v1 * v1) / 2.0))
        vp = max(vp, v0, v1)
        t_acc = (vp - v0) / accel
        t_dec = (vp - v1) / accel
        d_acc = (vp * vp - v0 * v0) / (2 * accel)
        d_dec = (vp * vp - v1 * v1) / (2 * accel)
        t_cruise = max(0.0, (length - d_acc - d_dec) / vp) if vp > 0 else 0.0
        emit(direction, a.as_array(), v0, vp, v1, t_acc, t_cruise, t_dec)

    # final rest sample exactly at the goal
    samples_p.append(pts[-1].as_array())
    samples_v.append(np.zeros(3))
    return ReferenceTrajectory(
        dt=dt, positions=np.array(samples_p), velocities=np.array(samples_v)
    )
