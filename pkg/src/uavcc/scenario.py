"""Scenario configuration: strict parsing, defaulting, and validation.

A scenario is one JSON document binding the whole closed loop: environment
and radio threshold, link and plant parameters, disturbances and obstacles,
the UAV fleet with trigger policies, scheduler settings, and the run
horizon. Unknown keys are rejected with their full path, and every field
that fell back to a default is echoed in the provenance log so a run is
auditable from its inputs alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import EtcTrigger, MpcWeights, PeriodicTrigger, StmpcTrigger, TriggerPolicy
from .core import Aabb, CovMatrix, ValidationError, Vec3, mat_psd_project
from .dynamics import Disturbance, MovingObstacle, PlantModel
from .radio import BaseStation, Environment, LinkModel, PathLossModel
from .scheduling import PriorityWeights

__all__ = ["ScenarioError", "Scenario", "UavSpec", "load_scenario", "builtin_scenario_path"]

_REQUIRED = object()


class ScenarioError(ValueError):
    """Configuration rejected; the message carries the offending field path."""


class _Node:
    """Tracks consumed keys and the path prefix while walking raw config."""

    def __init__(self, raw, path: str, provenance: list[str]):
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ScenarioError(f"{path}: expected an object")
        self.raw = raw
        self.path = path
        self.provenance = provenance
        self._consumed: set[str] = set()

    def _sub(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def get(self, key: str, kind, default=_REQUIRED, check=None):
        self._consumed.add(key)
        path = self._sub(key)
        if key not in self.raw:
            if default is _REQUIRED:
                raise ScenarioError(f"{path}: required field missing")
            self.provenance.append(f"{path} = {json.dumps(default)} (default)")
            value = default
        else:
            value = self.raw[key]
        if value is None and default is not _REQUIRED:
            return value
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
        elif kind is int and isinstance(value, int) and not isinstance(value, bool):
            value = int(value)
        elif kind is not None and not isinstance(value, kind):
            raise ScenarioError(f"{path}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
        if check is not None:
            err = check(value)
            if err:
                raise ScenarioError(f"{path}: {err}")
        return value

    def child(self, key: str, default_empty: bool = True) -> "_Node":
        self._consumed.add(key)
        raw = self.raw.get(key)
        if raw is None and not default_empty:
            raise ScenarioError(f"{self._sub(key)}: required section missing")
        return _Node(raw, self._sub(key), self.provenance)

    def child_list(self, key: str, required: bool = False) -> list["_Node"]:
        self._consumed.add(key)
        raw = self.raw.get(key)
        if raw is None:
            if required:
                raise ScenarioError(f"{self._sub(key)}: required list missing")
            return []
        if not isinstance(raw, list):
            raise ScenarioError(f"{self._sub(key)}: expected a list")
        return [_Node(item, f"{self._sub(key)}[{i}]", self.provenance) for i, item in enumerate(raw)]

    def has(self, key: str) -> bool:
        return key in self.raw

    def finish(self):
        unknown = set(self.raw) - self._consumed
        if unknown:
            name = sorted(unknown)[0]
            raise ScenarioError(f"{self._sub(name)}: unknown key")


def _vec3(node: _Node, key: str, default=_REQUIRED) -> Vec3:
    raw = node.get(key, list, default)
    if len(raw) != 3 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
        raise ScenarioError(f"{node._sub(key)}: expected [x, y, z] numbers")
    return Vec3(float(raw[0]), float(raw[1]), float(raw[2]))


def _box(node: _Node) -> Aabb:
    lo = _vec3(node, "min")
    hi = _vec3(node, "max")
    node.finish()
    try:
        return Aabb(lo, hi)
    except ValidationError as e:
        raise ScenarioError(f"{node.path}: {e}") from e


@dataclass(frozen=True)
class UavSpec:
    uav_id: int
    start: Vec3
    goal: Vec3
    cruise_speed: float
    trigger: TriggerPolicy
    mpc: MpcWeights


@dataclass(frozen=True)
class SchedulerConfig:
    m_slots: int
    weights: PriorityWeights
    risk_radius_m: float
    high_risk_boxes: tuple[Aabb, ...]
    r_meas: CovMatrix


@dataclass(frozen=True)
class PlannerConfig:
    w_dist: float
    w_handover: float
    w_risk: float
    gamma_margin_db: float | None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    horizon_slots: int
    profile: str | None
    environment: Environment
    gamma_th_db: float
    link: LinkModel
    plant: PlantModel
    disturbance: Disturbance
    gust_q_extra: np.ndarray | None  # added to the model Q while a gust is sensed
    gust_compensation: bool  # UAV feeds forward its sensed gust bias
    statics: tuple[Aabb, ...]
    movers: tuple[MovingObstacle, ...]
    uavs: tuple[UavSpec, ...]
    scheduler: SchedulerConfig
    planner: PlannerConfig
    sweep_n: tuple[int, ...]
    sweep_m: tuple[int, ...]
    offered_ul_mbps: float | None
    offered_dl_mbps: float | None
    provenance: tuple[str, ...]
    resolved: dict = field(repr=False, default=None)

    def echo(self) -> str:
        """Canonical JSON of the fully defaulted configuration."""
        return json.dumps(self.resolved, indent=2, sort_keys=True) + "\n"


def _parse_trigger(node: _Node) -> TriggerPolicy:
    kind = node.get("kind", str, "periodic", check=lambda v: None if v in ("periodic", "etc", "stmpc") else f"unknown trigger kind {v!r}")
    if kind == "periodic":
        out = PeriodicTrigger(period=node.get("period_slots", int, 1))
    elif kind == "etc":
        out = EtcTrigger(threshold_m=node.get("threshold_m", float, 0.5))
    else:
        out = StmpcTrigger(
            risk_kappa=node.get("risk_kappa", float, 3.0),
            safety_margin_m=node.get("safety_margin_m", float, 0.5),
            horizon_max=node.get("horizon_max_slots", int, 12),
        )
    node.finish()
    return out


def _parse_mpc(node: _Node) -> MpcWeights:
    out = MpcWeights(
        q_pos=node.get("q_pos", float, 1.0),
        q_vel=node.get("q_vel", float, 0.1),
        r_u=node.get("r_u", float, 0.05),
        horizon_max=node.get("horizon_max_slots", int, 12),
    )
    node.finish()
    return out


def _parse_uav(node: _Node, default_cruise: float) -> UavSpec:
    spec = UavSpec(
        uav_id=node.get("id", int),
        start=_vec3(node, "start"),
        goal=_vec3(node, "goal"),
        cruise_speed=node.get("cruise_speed_mps", float, default_cruise),
        trigger=_parse_trigger(node.child("trigger")),
        mpc=_parse_mpc(node.child("mpc")),
    )
    node.finish()
    return spec


def _resolve_fleet(node: _Node) -> list[UavSpec]:
    uavs = [_parse_uav(n, 5.0) for n in node.child_list("uavs")]
    lanes = node.child("lanes") if node.has("lanes") else None
    node._consumed.add("lanes")
    if lanes is not None:
        count = lanes.get("count", int, check=lambda v: None if v >= 1 else "must be >= 1")
        start0 = _vec3(lanes, "start")
        goal0 = _vec3(lanes, "goal")
        step = _vec3(lanes, "step")
        cruise = lanes.get("cruise_speed_mps", float, 5.0)
        trigger = _parse_trigger(lanes.child("trigger"))
        mpc = _parse_mpc(lanes.child("mpc"))
        lanes.finish()
        base = len(uavs)
        for i in range(count):
            uavs.append(
                UavSpec(
                    uav_id=base + i,
                    start=start0 + step.scaled(i),
                    goal=goal0 + step.scaled(i),
                    cruise_speed=cruise,
                    trigger=trigger,
                    mpc=mpc,
                )
            )
    node.finish()
    if not uavs:
        raise ScenarioError("fleet: needs at least one uav (fleet.uavs or fleet.lanes)")
    ids = [u.uav_id for u in uavs]
    if len(set(ids)) != len(ids):
        raise ScenarioError("fleet: uav ids must be unique")
    return uavs


def load_scenario(path: str | Path) -> Scenario:
    """Parse, default, and validate one scenario file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: not valid JSON ({e})") from e
    return parse_scenario(raw, name_hint=path.stem)


def parse_scenario(raw: dict, name_hint: str = "scenario") -> Scenario:
    provenance: list[str] = []
    root = _Node(raw, "", provenance)

    version = root.get("version", int, 1)
    if version != 1:
        raise ScenarioError(f"version: unsupported scenario version {version}")
    name = root.get("name", str, name_hint)
    seed = root.get("seed", int, 0)
    horizon = root.get("horizon_slots", int, check=lambda v: None if v >= 1 else "must be >= 1")
    profile = root.get("profile", str, None)

    env_node = root.child("environment", default_empty=False)
    bounds = _box(env_node.child("bounds", default_empty=False))
    resolution = env_node.get("grid_resolution_m", float, check=lambda v: None if v > 0 else "must be > 0")
    buildings = tuple(_box(b) for b in env_node.child_list("buildings"))
    stations = []
    for bs_node in env_node.child_list("base_stations", required=True):
        stations.append(
            BaseStation(
                id=bs_node.get("id", int),
                position=_vec3(bs_node, "position"),
                tx_power_dbm=bs_node.get("tx_power_dbm", float, 30.0),
                tilt_deg=bs_node.get("tilt_deg", float, 10.0),
                beamwidth_3db_deg=bs_node.get("beamwidth_3db_deg", float, 10.0),
                max_attenuation_db=bs_node.get("max_attenuation_db", float, 30.0),
            )
        )
        bs_node.finish()
    noise = env_node.get("noise_power_dbm", float, -96.0)
    pl_node = env_node.child("pathloss")
    pathloss = PathLossModel(
        n_los=pl_node.get("n_los", float, 2.2),
        n_nlos=pl_node.get("n_nlos", float, 3.5),
        f_ref_hz=pl_node.get("f_ref_hz", float, 2.0e9),
    )
    pl_node.finish()
    env_node.finish()
    try:
        environment = Environment(
            bounds=bounds,
            buildings=buildings,
            base_stations=tuple(stations),
            noise_power_dbm=noise,
            grid_resolution_m=resolution,
            pathloss=pathloss,
        )
    except ValidationError as e:
        raise ScenarioError(f"environment: {e}") from e

    plant_node = root.child("plant", default_empty=False)
    dt = plant_node.get("dt_s", float, check=lambda v: None if v > 0 else "must be > 0")
    u_max = plant_node.get("u_max_mps2", float, 2.0, check=lambda v: None if v > 0 else "must be > 0")
    v_max = plant_node.get("v_max_mps", float, 12.0, check=lambda v: None if v > 0 else "must be > 0")
    nonneg = lambda v: None if v >= 0 else "must be >= 0"  # noqa: E731
    accel_noise = plant_node.get("accel_noise_std_mps2", float, 0.05, check=nonneg)
    pos_noise = plant_node.get("turb_pos_std_m", float, 0.0, check=nonneg)
    vel_noise = plant_node.get("turb_vel_std_mps", float, 0.0, check=nonneg)
    r_pos = plant_node.get("meas_cov_pos_m2", float, 0.01, check=nonneg)
    r_vel = plant_node.get("meas_cov_vel_m2s2", float, 0.04, check=nonneg)
    plant_node.finish()
    base_plant = PlantModel.from_accel_noise(dt=dt, accel_noise_std=accel_noise, u_max=u_max, v_max=v_max)
    # turbulence jitter: per-slot position and velocity scatter the actuators
    # cannot preempt, layered on the acceleration-driven component
    q_full = base_plant.q.m + np.diag([pos_noise**2] * 3 + [vel_noise**2] * 3)
    plant = base_plant.with_q(mat_psd_project(q_full))

    link_node = root.child("link")
    try:
        link = LinkModel(
            gamma_th_db=link_node.get("gamma_th_db", float, 0.0),
            steepness_per_db=link_node.get("steepness_per_db", float, 0.5),
            slot_duration_s=dt,
            energy_per_packet_j=link_node.get("energy_per_packet_j", float, 0.05),
        )
    except ValidationError as e:
        raise ScenarioError(f"link: {e}") from e
    link_node.finish()

    dist_node = root.child("disturbance")
    gust_q_extra = None
    gust_compensation = True
    if dist_node.has("gust"):
        gust_node = dist_node.child("gust")
        start_slot = gust_node.get("start_slot", int)
        end_slot = gust_node.get("end_slot", int)
        bias = _vec3(gust_node, "bias_mps2")
        factor = gust_node.get("uncertainty_factor", float, 1.0)
        gust_compensation = gust_node.get("compensate_bias", bool, True)
        gust_node.finish()
        if not 0 <= start_slot <= end_slot <= horizon:
            raise ScenarioError("disturbance.gust: interval must satisfy 0 <= start <= end <= horizon_slots")
        if bias.norm() > u_max:
            raise ScenarioError("disturbance.gust.bias_mps2: gust bias magnitude exceeds u_max")
        disturbance = Disturbance.gust(plant.q, start_slot, end_slot, bias)
        b2 = bias.as_array() ** 2 * factor
        gust_q_extra = plant.b @ np.diag(b2) @ plant.b.T
    else:
        disturbance = Disturbance.gaussian(plant.q)
    dist_node.finish()

    obs_node = root.child("obstacles")
    statics = tuple(_box(b) for b in obs_node.child_list("static"))
    movers = []
    for mv_node in obs_node.child_list("moving"):
        keyframes = []
        for kf in mv_node.child_list("keyframes", required=True):
            slot = kf.get("slot", int)
            lo = _vec3(kf, "min")
            hi = _vec3(kf, "max")
            kf.finish()
            try:
                keyframes.append((slot, Aabb(lo, hi)))
            except ValidationError as e:
                raise ScenarioError(f"{kf.path}: {e}") from e
        inflation = mv_node.get("inflation_m", float, 0.0)
        mv_node.finish()
        try:
            movers.append(MovingObstacle(keyframes=tuple(keyframes), inflation_m=inflation))
        except ValidationError as e:
            raise ScenarioError(f"{mv_node.path}: {e}") from e
    obs_node.finish()

    planner_node = root.child("planner")
    planner_cfg = PlannerConfig(
        w_dist=planner_node.get("w_dist", float, 1.0),
        w_handover=planner_node.get("w_handover", float, 5.0),
        w_risk=planner_node.get("w_risk", float, 0.5),
        gamma_margin_db=planner_node.get("gamma_margin_db", float, None),
    )
    planner_node.finish()

    fleet_node = root.child("fleet", default_empty=False)
    uavs = _resolve_fleet(fleet_node)
    for u in uavs:
        for which, p in (("start", u.start), ("goal", u.goal)):
            if not environment.bounds.contains(p):
                raise ScenarioError(f"fleet uav {u.uav_id}: {which} {p} outside environment bounds")
        if u.cruise_speed <= 0 or u.cruise_speed > v_max:
            raise ScenarioError(f"fleet uav {u.uav_id}: cruise_speed_mps must be in (0, v_max]")

    sched_node = root.child("scheduler")
    try:
        weights = PriorityWeights(
            w_cov=sched_node.get("w_cov", float, 1.0),
            w_aoi=sched_node.get("w_aoi", float, 0.5),
            w_risk=sched_node.get("w_risk", float, 2.0),
        )
    except ValidationError as e:
        raise ScenarioError(f"scheduler: {e}") from e
    scheduler_cfg = SchedulerConfig(
        m_slots=sched_node.get("slots_per_round", int, 1, check=lambda v: None if v >= 1 else "must be >= 1"),
        weights=weights,
        risk_radius_m=sched_node.get("risk_radius_m", float, 10.0),
        high_risk_boxes=tuple(_box(b) for b in sched_node.child_list("high_risk_boxes")),
        r_meas=CovMatrix.isotropic(r_pos, r_vel),
    )
    sched_node.finish()

    sweep_node = root.child("sweep")
    sweep_n = tuple(sweep_node.get("n", list, []))
    sweep_m = tuple(sweep_node.get("m", list, []))
    sweep_node.finish()
    for label, values in (("sweep.n", sweep_n), ("sweep.m", sweep_m)):
        for v in values:
            if not isinstance(v, int) or v < 1:
                raise ScenarioError(f"{label}: entries must be integers >= 1")
    if max(sweep_n, default=0) > len(uavs):
        raise ScenarioError(f"sweep.n: largest entry exceeds fleet size {len(uavs)}")

    load_node = root.child("offered_load")
    offered_ul = load_node.get("ul_mbps", float, None)
    offered_dl = load_node.get("dl_mbps", float, None)
    load_node.finish()

    root.finish()

    gamma_th = link.gamma_th_db
    scenario = Scenario(
        name=name,
        seed=seed,
        horizon_slots=horizon,
        profile=profile,
        environment=environment,
        gamma_th_db=gamma_th,
        link=link,
        plant=plant,
        disturbance=disturbance,
        gust_q_extra=gust_q_extra,
        gust_compensation=gust_compensation,
        statics=statics,
        movers=tuple(movers),
        uavs=tuple(uavs),
        scheduler=scheduler_cfg,
        planner=planner_cfg,
        sweep_n=sweep_n,
        sweep_m=sweep_m,
        offered_ul_mbps=offered_ul,
        offered_dl_mbps=offered_dl,
        provenance=tuple(provenance),
        resolved=_resolved_dict(locals()),
    )
    return scenario


def _resolved_dict(ns) -> dict:
    """Canonical resolved-config snapshot used by Scenario.echo()."""
    env: Environment = ns["environment"]
    plant: PlantModel = ns["plant"]
    link: LinkModel = ns["link"]
    dist: Disturbance = ns["disturbance"]
    sched: SchedulerConfig = ns["scheduler_cfg"]
    planner: PlannerConfig = ns["planner_cfg"]

    def box(b: Aabb):
        return {"min": [b.min.x, b.min.y, b.min.z], "max": [b.max.x, b.max.y, b.max.z]}

    def vec(v: Vec3):
        return [v.x, v.y, v.z]

    def trigger(t) -> dict:
        if isinstance(t, PeriodicTrigger):
            return {"kind": "periodic", "period_slots": t.period}
        if isinstance(t, EtcTrigger):
            return {"kind": "etc", "threshold_m": t.threshold_m}
        return {
            "kind": "stmpc",
            "risk_kappa": t.risk_kappa,
            "safety_margin_m": t.safety_margin_m,
            "horizon_max_slots": t.horizon_max,
        }

    return {
        "version": 1,
        "name": ns["name"],
        "seed": ns["seed"],
        "horizon_slots": ns["horizon"],
        "profile": ns["profile"],
        "environment": {
            "bounds": box(env.bounds),
            "grid_resolution_m": env.grid_resolution_m,
            "noise_power_dbm": env.noise_power_dbm,
            "buildings": [box(b) for b in env.buildings],
            "base_stations": [
                {
                    "id": b.id,
                    "position": vec(b.position),
                    "tx_power_dbm": b.tx_power_dbm,
                    "tilt_deg": b.tilt_deg,
                    "beamwidth_3db_deg": b.beamwidth_3db_deg,
                    "max_attenuation_db": b.max_attenuation_db,
                }
                for b in env.base_stations
            ],
            "pathloss": {
                "n_los": env.pathloss.n_los,
                "n_nlos": env.pathloss.n_nlos,
                "f_ref_hz": env.pathloss.f_ref_hz,
            },
        },
        "link": {
            "gamma_th_db": link.gamma_th_db,
            "steepness_per_db": link.steepness_per_db,
            "slot_duration_s": link.slot_duration_s,
            "energy_per_packet_j": link.energy_per_packet_j,
        },
        "plant": {
            "dt_s": plant.dt,
            "u_max_mps2": plant.u_max,
            "v_max_mps": plant.v_max,
            "process_noise_trace": plant.q.trace(),
            "meas_cov_pos_m2": sched.r_meas.m[0, 0],
            "meas_cov_vel_m2s2": sched.r_meas.m[3, 3],
        },
        "disturbance": {
            "gust": None
            if dist.gust_start is None
            else {
                "start_slot": dist.gust_start,
                "end_slot": dist.gust_end,
                "bias_mps2": vec(dist.gust_bias),
                "compensate_bias": ns["gust_compensation"],
            },
        },
        "obstacles": {
            "static": [box(b) for b in ns["statics"]],
            "moving": [
                {
                    "inflation_m": mv.inflation_m,
                    "keyframes": [{"slot": t, "min": box(b)["min"], "max": box(b)["max"]} for t, b in mv.keyframes],
                }
                for mv in ns["movers"]
            ],
        },
        "planner": {
            "w_dist": planner.w_dist,
            "w_handover": planner.w_handover,
            "w_risk": planner.w_risk,
            "gamma_margin_db": planner.gamma_margin_db,
        },
        "fleet": [
            {
                "id": u.uav_id,
                "start": vec(u.start),
                "goal": vec(u.goal),
                "cruise_speed_mps": u.cruise_speed,
                "trigger": trigger(u.trigger),
                "mpc": {
                    "q_pos": u.mpc.q_pos,
                    "q_vel": u.mpc.q_vel,
                    "r_u": u.mpc.r_u,
                    "horizon_max_slots": u.mpc.horizon_max,
                },
            }
            for u in ns["uavs"]
        ],
        "scheduler": {
            "slots_per_round": sched.m_slots,
            "w_cov": sched.weights.w_cov,
            "w_aoi": sched.weights.w_aoi,
            "w_risk": sched.weights.w_risk,
            "risk_radius_m": sched.risk_radius_m,
            "high_risk_boxes": [box(b) for b in sched.high_risk_boxes],
        },
        "sweep": {"n": list(ns["sweep_n"]), "m": list(ns["sweep_m"])},
        "offered_load": {"ul_mbps": ns["offered_ul"], "dl_mbps": ns["offered_dl"]},
        "provenance": list(ns["provenance"]),
    }


def builtin_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (case1, case2)."""
    ref = resources.files("uavcc.data").joinpath(f"{name}.scenario")
    with resources.as_file(ref) as p:
        return Path(p)
