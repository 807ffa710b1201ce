"""SINR radio map construction and the per-slot packet-erasure link model.

The map is a 3D grid of per-cell SINR (dB) plus the serving base station,
built once from the environment and then immutable. Cells inside buildings
carry a -inf sentinel and are excluded from the navigation-feasible set.
The link itself is abstracted to a logistic erasure curve over SINR; no
fading or PHY-layer detail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Aabb, Rng, ValidationError, Vec3

__all__ = [
    "SPEED_OF_LIGHT",
    "BaseStation",
    "Environment",
    "RadioMap",
    "LinkModel",
    "OutOfDomainError",
    "received_power_dbm",
    "build_radio_map",
    "sinr_at",
    "packet_outcome",
    "packet_outcome_batch",
    "handover_count",
    "export_radio_map_csv",
]

SPEED_OF_LIGHT = 299792458.0

NEG_INF_DB = float("-inf")


class OutOfDomainError(ValueError):
    """A query point fell outside the map's spatial domain."""


@dataclass(frozen=True)
class BaseStation:
    """Down-tilted cellular antenna site.

    The vertical pattern is the standard quadratic-in-dB shape
    -min(12 * ((theta - tilt) / beamwidth)^2, max_attenuation), with theta
    the depression angle toward the receiver. Above the main lobe the
    attenuation floor produces the coverage blind cone typical of
    ground-serving sites.
    """

    id: int
    position: Vec3
    tx_power_dbm: float = 30.0
    tilt_deg: float = 10.0
    beamwidth_3db_deg: float = 10.0
    max_attenuation_db: float = 30.0

    def __post_init__(self):
        if not 0.0 <= self.tx_power_dbm <= 60.0:
            raise ValidationError(f"bs {self.id}: tx_power {self.tx_power_dbm} dBm outside [0, 60]")
        if not 0.0 <= self.tilt_deg <= 90.0:
            raise ValidationError(f"bs {self.id}: tilt {self.tilt_deg} deg outside [0, 90]")
        if self.beamwidth_3db_deg <= 0.0:
            raise ValidationError(f"bs {self.id}: beamwidth must be > 0")
        if self.max_attenuation_db <= 0.0:
            raise ValidationError(f"bs {self.id}: max_attenuation must be > 0")


@dataclass(frozen=True)
class PathLossModel:
    """Log-distance path loss with separate LoS / NLoS exponents.

    loss(d) = 20*log10(4*pi*d0*f_ref/c) + 10*n*log10(d/d0) with d0 = 1 m.
    Defaults are urban-macro-style values; all configurable per scenario.
    """

    n_los: float = 2.2
    n_nlos: float = 3.5
    f_ref_hz: float = 2.0e9

    def __post_init__(self):
        if self.n_los <= 0 or self.n_nlos <= 0 or self.f_ref_hz <= 0:
            raise ValidationError("path loss exponents and reference frequency must be > 0")

    def reference_loss_db(self) -> float:
        return 20.0 * math.log10(4.0 * math.pi * 1.0 * self.f_ref_hz / SPEED_OF_LIGHT)

    def loss_db(self, d_m: float, los: bool) -> float:
        d = max(d_m, 1.0)
        n = self.n_los if los else self.n_nlos
        return self.reference_loss_db() + 10.0 * n * math.log10(d)


@dataclass(frozen=True)
class Environment:
    """Static world: bounds, buildings, base stations, noise floor, grid pitch."""

    bounds: Aabb
    buildings: tuple[Aabb, ...]
    base_stations: tuple[BaseStation, ...]
    noise_power_dbm: float = -96.0
    grid_resolution_m: float = 5.0
    pathloss: PathLossModel = field(default_factory=PathLossModel)

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "base_stations", tuple(self.base_stations))
        if self.grid_resolution_m <= 0:
            raise ValidationError("grid_resolution_m must be > 0")
        if len(self.base_stations) < 1:
            raise ValidationError("environment needs at least one base station")
        ids = [b.id for b in self.base_stations]
        if len(set(ids)) != len(ids):
            raise ValidationError("base station ids must be unique")
        for i, b in enumerate(self.buildings):
            if not self.bounds.contains_box(b):
                raise ValidationError(f"building {i} extends outside environment bounds")

    def in_building(self, p: Vec3) -> bool:
        return any(b.contains(p) for b in self.buildings)

    def grid_shape(self) -> tuple[int, int, int]:
        """Cell counts per axis; the grid may pad past bounds.max to a whole cell."""
        ext = self.bounds.size()
        res = self.grid_resolution_m
        return (
            max(1, math.ceil(ext.x / res - 1e-9)),
            max(1, math.ceil(ext.y / res - 1e-9)),
            max(1, math.ceil(ext.z / res - 1e-9)),
        )


@dataclass(frozen=True)
class LinkModel:
    """Per-slot packet erasure: success probability follows a logistic in SINR."""

    gamma_th_db: float = 0.0
    steepness_per_db: float = 0.5
    slot_duration_s: float = 0.1
    energy_per_packet_j: float = 0.05

    def __post_init__(self):
        if self.steepness_per_db <= 0:
            raise ValidationError("steepness_per_db must be > 0")
        if not 0.0 < self.slot_duration_s <= 1.0:
            raise ValidationError("slot_duration_s must be in (0, 1]")
        if self.energy_per_packet_j <= 0:
            raise ValidationError("energy_per_packet_j must be > 0")

    def success_probability(self, sinr_db: float) -> float:
        if sinr_db == NEG_INF_DB:
            return 0.0
        x = -self.steepness_per_db * (sinr_db - self.gamma_th_db)
        if x > 700.0:
            return 0.0
        return 1.0 / (1.0 + math.exp(x))


class RadioMap:
    """Immutable 3D grid of SINR, serving station, and building occupancy."""

    def __init__(
        self,
        origin: Vec3,
        resolution_m: float,
        sinr_db: np.ndarray,
        serving_bs: np.ndarray,
        in_building: np.ndarray,
        gamma_th_db: float,
        bounds: Aabb,
    ):
        self.origin = origin
        self.resolution_m = float(resolution_m)
        self.gamma_th_db = float(gamma_th_db)
        self.bounds = bounds
        for a in (sinr_db, serving_bs, in_building):
            a.setflags(write=False)
        self.sinr_db = sinr_db
        self.serving_bs = serving_bs
        self.in_building = in_building
        self.shape = sinr_db.shape

    def cell_center(self, ix: int, iy: int, iz: int) -> Vec3:
        r = self.resolution_m
        return Vec3(
            self.origin.x + (ix + 0.5) * r,
            self.origin.y + (iy + 0.5) * r,
            self.origin.z + (iz + 0.5) * r,
        )

    def cell_of(self, p: Vec3) -> tuple[int, int, int]:
        """Index of the cell containing p, clamped to the grid."""
        r = self.resolution_m
        nx, ny, nz = self.shape
        ix = min(max(int((p.x - self.origin.x) / r), 0), nx - 1)
        iy = min(max(int((p.y - self.origin.y) / r), 0), ny - 1)
        iz = min(max(int((p.z - self.origin.z) / r), 0), nz - 1)
        return ix, iy, iz

    def grid_max(self) -> Vec3:
        nx, ny, nz = self.shape
        r = self.resolution_m
        return Vec3(self.origin.x + nx * r, self.origin.y + ny * r, self.origin.z + nz * r)

    def in_domain(self, p: Vec3) -> bool:
        g = self.grid_max()
        return (
            self.origin.x <= p.x <= g.x
            and self.origin.y <= p.y <= g.y
            and self.origin.z <= p.z <= g.z
        )

    def feasible(self) -> np.ndarray:
        """Boolean grid of cells with SINR at or above the threshold, outside buildings."""
        return (~self.in_building) & (self.sinr_db >= self.gamma_th_db)


def _antenna_gain_db(bs: BaseStation, p: Vec3) -> float:
    dx = p.x - bs.position.x
    dy = p.y - bs.position.y
    horiz = math.hypot(dx, dy)
    # depression angle: positive looking down from the antenna toward p
    theta = math.degrees(math.atan2(bs.position.z - p.z, horiz))
    off = (theta - bs.tilt_deg) / bs.beamwidth_3db_deg
    return -min(12.0 * off * off, bs.max_attenuation_db)


def _line_of_sight(env: Environment, a: Vec3, b: Vec3) -> bool:
    return not any(bld.segment_intersects(a, b) for bld in env.buildings)


def received_power_dbm(bs: BaseStation, p: Vec3, env: Environment) -> float:
    """Received power at p from one station: tx power + pattern gain - path loss.

    The receiver must be inside the environment and outside every building;
    distances under the 1 m reference are clamped to it.
    """
    if env.in_building(p):
        raise ValidationError(f"receiver position {p} is inside a building")
    d = bs.position.distance_to(p)
    los = _line_of_sight(env, bs.position, p)
    return bs.tx_power_dbm + _antenna_gain_db(bs, p) - env.pathloss.loss_db(d, los)


def _received_power_grid(env: Environment, centers: np.ndarray, bs: BaseStation) -> np.ndarray:
    """Vectorized received power (dBm) from one station at many points."""
    bp = bs.position.as_array()
    delta = centers - bp
    d = np.linalg.norm(delta, axis=1)
    horiz = np.hypot(delta[:, 0], delta[:, 1])
    theta = np.degrees(np.arctan2(bp[2] - centers[:, 2], horiz))
    off = (theta - bs.tilt_deg) / bs.beamwidth_3db_deg
    gain = -np.minimum(12.0 * off * off, bs.max_attenuation_db)

    blocked = np.zeros(len(centers), dtype=bool)
    for bld in env.buildings:
        blocked |= _segment_box_hits(bp, centers, bld)
    n = np.where(blocked, env.pathloss.n_nlos, env.pathloss.n_los)
    loss = env.pathloss.reference_loss_db() + 10.0 * n * np.log10(np.maximum(d, 1.0))
    return bs.tx_power_dbm + gain - loss


def _segment_box_hits(a: np.ndarray, bs_pts: np.ndarray, box: Aabb) -> np.ndarray:
    """Vectorized open-segment vs box-interior test from point a to each row of bs_pts."""
    lo = box.min.as_array()
    hi = box.max.as_array()
    t0 = np.zeros(len(bs_pts))
    t1 = np.ones(len(bs_pts))
    ok = np.ones(len(bs_pts), dtype=bool)
    for ax in range(3):
        av = a[ax]
        dv = bs_pts[:, ax] - av
        parallel = dv == 0.0
        inside_slab = (lo[ax] < av) & (av < hi[ax])
        ok &= ~parallel | inside_slab
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[ax] - av) / dv
            tb = (hi[ax] - av) / dv
        lo_t = np.minimum(ta, tb)
        hi_t = np.maximum(ta, tb)
        t0 = np.where(parallel, t0, np.maximum(t0, lo_t))
        t1 = np.where(parallel, t1, np.minimum(t1, hi_t))
        ok &= parallel | (t0 < t1)
    return ok & (t1 > 0.0) & (t0 < 1.0)


def build_radio_map(env: Environment, gamma_th_db: float) -> RadioMap:
    """Precompute per-cell SINR and serving station over the whole grid.

    For every free cell center the serving station is the received-power
    argmax (ties to the lowest id) and SINR is serving power over the sum of
    all other stations plus noise, composed in linear milliwatts. Building
    cells carry a -inf sentinel. The build is deterministic: identical
    environments produce bit-identical maps.
    """
    nx, ny, nz = env.grid_shape()
    res = env.grid_resolution_m
    o = env.bounds.min

    ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    centers = np.stack(
        [
            o.x + (ix.ravel() + 0.5) * res,
            o.y + (iy.ravel() + 0.5) * res,
            o.z + (iz.ravel() + 0.5) * res,
        ],
        axis=1,
    )

    in_bld = np.zeros(len(centers), dtype=bool)
    for bld in env.buildings:
        lo = bld.min.as_array()
        hi = bld.max.as_array()
        in_bld |= np.all((centers >= lo) & (centers <= hi), axis=1)

    stations = sorted(env.base_stations, key=lambda b: b.id)
    power_dbm = np.stack([_received_power_grid(env, centers, b) for b in stations], axis=0)
    power_mw = 10.0 ** (power_dbm / 10.0)

    serve_idx = np.argmax(power_mw, axis=0)  # first max = lowest id, stations sorted
    serve_mw = np.take_along_axis(power_mw, serve_idx[None, :], axis=0)[0]
    total_mw = power_mw.sum(axis=0)
    noise_mw = 10.0 ** (env.noise_power_dbm / 10.0)
    interference_mw = total_mw - serve_mw
    with np.errstate(divide="ignore"):
        sinr = 10.0 * np.log10(serve_mw / (interference_mw + noise_mw))

    ids = np.array([b.id for b in stations], dtype=np.int64)
    serving = ids[serve_idx]
    sinr[in_bld] = NEG_INF_DB
    serving = np.where(in_bld, -1, serving)

    return RadioMap(
        origin=o,
        resolution_m=res,
        sinr_db=sinr.reshape(nx, ny, nz),
        serving_bs=serving.reshape(nx, ny, nz),
        in_building=in_bld.reshape(nx, ny, nz),
        gamma_th_db=gamma_th_db,
        bounds=env.bounds,
    )


def _nearest_free_value(radio_map: RadioMap, ix: int, iy: int, iz: int) -> float:
    """SINR of the free cell nearest to the given cell, by expanding search."""
    nx, ny, nz = radio_map.shape
    free = ~radio_map.in_building
    if free[ix, iy, iz]:
        return float(radio_map.sinr_db[ix, iy, iz])
    for radius in range(1, max(nx, ny, nz)):
        x0, x1 = max(ix - radius, 0), min(ix + radius, nx - 1)
        y0, y1 = max(iy - radius, 0), min(iy + radius, ny - 1)
        z0, z1 = max(iz - radius, 0), min(iz + radius, nz - 1)
        block = free[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1]
        if not block.any():
            continue
        cand = np.argwhere(block)
        cand[:, 0] += x0
        cand[:, 1] += y0
        cand[:, 2] += z0
        d2 = (cand[:, 0] - ix) ** 2 + (cand[:, 1] - iy) ** 2 + (cand[:, 2] - iz) ** 2
        best = cand[np.argmin(d2)]
        return float(radio_map.sinr_db[best[0], best[1], best[2]])
    raise OutOfDomainError("radio map has no free cells")


def sinr_at(radio_map: RadioMap, p: Vec3) -> float:
    """Trilinear SINR lookup over the eight surrounding free-cell centers.

    Corners that carry zero interpolation weight are ignored, so queries on
    exact cell-center planes never touch the sentinel values of unrelated
    neighbors. If a contributing corner lies inside a building the lookup
    falls back to the nearest free cell's stored value.
    """
    if not radio_map.in_domain(p):
        raise OutOfDomainError(f"{p} is outside the radio map domain")
    r = radio_map.resolution_m
    nx, ny, nz = radio_map.shape
    g = np.array(
        [
            (p.x - radio_map.origin.x) / r - 0.5,
            (p.y - radio_map.origin.y) / r - 0.5,
            (p.z - radio_map.origin.z) / r - 0.5,
        ]
    )
    base = np.floor(g).astype(int)
    frac = g - base
    # clamp so both slabs exist; beyond the last center the weight saturates
    for ax, n in enumerate((nx, ny, nz)):
        if base[ax] < 0:
            base[ax], frac[ax] = 0, 0.0
        elif base[ax] >= n - 1:
            base[ax], frac[ax] = n - 2, 1.0
            if n == 1:
                base[ax], frac[ax] = 0, 0.0

    total = 0.0
    for dx in (0, 1):
        wx = frac[0] if dx else 1.0 - frac[0]
        if wx == 0.0:
            continue
        for dy in (0, 1):
            wy = frac[1] if dy else 1.0 - frac[1]
            if wy == 0.0:
                continue
            for dz in (0, 1):
                wz = frac[2] if dz else 1.0 - frac[2]
                if wz == 0.0:
                    continue
                ix = min(base[0] + dx, nx - 1)
                iy = min(base[1] + dy, ny - 1)
                iz = min(base[2] + dz, nz - 1)
                if radio_map.in_building[ix, iy, iz]:
                    cx, cy, cz = radio_map.cell_of(p)
                    return _nearest_free_value(radio_map, cx, cy, cz)
                total += wx * wy * wz * float(radio_map.sinr_db[ix, iy, iz])
    return total


def packet_outcome(link: LinkModel, sinr_db: float, rng: Rng) -> bool:
    """One erasure-channel draw; consumes one uniform even at the extremes."""
    u = rng.uniform()
    return u < link.success_probability(sinr_db)


def packet_outcome_batch(link: LinkModel, sinr_db: float, rng: Rng, n: int) -> np.ndarray:
    """Vectorized packet_outcome: n draws from the same stream, same u < p rule."""
    return rng.uniforms(n) < link.success_probability(sinr_db)


def handover_count(radio_map: RadioMap, path: list[Vec3]) -> int:
    """Serving-station changes along a path resampled at grid resolution.

    Samples inside building cells carry no serving station and are skipped
    rather than counted as a change.
    """
    if len(path) < 2:
        return 0
    res = radio_map.resolution_m
    samples: list[Vec3] = [path[0]]
    for a, b in zip(path[:-1], path[1:]):
        seg = b - a
        length = seg.norm()
        if length == 0.0:
            continue
        steps = max(1, int(math.ceil(length / res)))
        for i in range(1, steps + 1):
            samples.append(a + seg.scaled(i / steps))

    count = 0
    prev_id: int | None = None
    for s in samples:
        if not radio_map.in_domain(s):
            raise OutOfDomainError(f"path sample {s} is outside the radio map domain")
        ix, iy, iz = radio_map.cell_of(s)
        if radio_map.in_building[ix, iy, iz]:
            continue
        sid = int(radio_map.serving_bs[ix, iy, iz])
        if prev_id is not None and sid != prev_id:
            count += 1
        prev_id = sid
    return count


def export_radio_map_csv(radio_map: RadioMap, path: str) -> None:
    """Write the full grid as CSV: ix,iy,iz,x,y,z,sinr_db,serving_bs,in_building."""
    nx, ny, nz = radio_map.shape
    with open(path, "w", newline="") as f:
        f.write("ix,iy,iz,x,y,z,sinr_db,serving_bs,in_building\n")
        for ix in range(nx):
            for iy in range(ny):
                for iz in range(nz):
                    c = radio_map.cell_center(ix, iy, iz)
                    s = radio_map.sinr_db[ix, iy, iz]
                    sinr_txt = "-inf" if s == NEG_INF_DB else repr(float(s))
                    f.write(
                        f"{ix},{iy},{iz},{c.x!r},{c.y!r},{c.z!r},"
                        f"{sinr_txt},{int(radio_map.serving_bs[ix, iy, iz])},"
                        f"{int(radio_map.in_building[ix, iy, iz])}\n"
                    )
