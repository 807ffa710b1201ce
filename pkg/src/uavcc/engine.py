"""The closed-loop slot engine: plan, fly, and orchestrate in one loop.

Stage order inside every slot is fixed and load-bearing:

    1. belief propagation (base-station estimates advance one slot)
    2. trigger requests (onboard policies decide who wants an exchange)
    3. scheduling (top-M of the requesting UAVs)
    4. uplink draws; delivered states reset the corresponding beliefs
    5. control solves and downlink draws for every granted UAV
    6. buffer execution on every UAV
    7. plant steps
    8. metrics

Any reordering is a defect. Energy accounting: every grant is one command
exchange and costs exactly one energy_per_packet, delivered or not. The
uplink state report is treated as negligible against the command packet.
One random stream per (purpose, UAV) keeps runs reproducible and policies
comparable under a shared seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import (
    ControlPacket,
    EtcTrigger,
    MpcWeights,
    PeriodicTrigger,
    PpcBuffer,
    StmpcTrigger,
    TriggerPolicy,
    buffer_execute,
    etc_should_trigger,
    solve_mpc,
    stmpc_length,
)
from .core import CovMatrix, Rng, UavState, Vec3, mat_psd_project, stream_id
from .dynamics import Disturbance, PlantModel, collision_check, step
from .planner import decompose_regions, plan_path, refine_trajectory
from .radio import RadioMap, build_radio_map, handover_count, packet_outcome, sinr_at
from .scheduling import (
    PacketMeta,
    SlotSchedule,
    SwarmMetrics,
    UavContext,
    UplinkOutcome,
    priority_score,
    schedule_slot,
    update_beliefs,
)
from .scenario import Scenario, UavSpec

__all__ = ["Runtime", "RunMetrics", "prepare_runtime", "run_closed_loop", "summarize"]

STREAM_NOISE = 1
STREAM_UPLINK = 2
STREAM_DOWNLINK = 3
STREAM_MEAS = 4


@dataclass(frozen=True)
class Runtime:
    """Immutable per-scenario artifacts shared by every run of a sweep."""

    radio_map: RadioMap
    trajectories: dict  # uav_id -> ReferenceTrajectory


def prepare_runtime(scenario: Scenario, uav_ids: list[int] | None = None) -> Runtime:
    """Build the radio map and plan every UAV once; fails fast when infeasible."""
    radio_map = build_radio_map(scenario.environment, scenario.gamma_th_db)
    graph = decompose_regions(radio_map)
    trajectories = {}
    wanted = set(uav_ids) if uav_ids is not None else {u.uav_id for u in scenario.uavs}
    for u in scenario.uavs:
        if u.uav_id not in wanted:
            continue
        waypoints = plan_path(
            graph,
            u.start,
            u.goal,
            scenario.planner.w_dist,
            scenario.planner.w_handover,
            scenario.planner.w_risk,
            radio_map,
            gamma_margin_db=scenario.planner.gamma_margin_db,
        )
        trajectories[u.uav_id] = refine_trajectory(waypoints, scenario.plant, u.cruise_speed)
    return Runtime(radio_map=radio_map, trajectories=trajectories)


@dataclass
class TriggerRow:
    slot: int
    uav: int
    policy: str
    triggered: int
    packet_len: int
    delivered: int
    buffer_cursor: int
    underrun: int


@dataclass
class RunMetrics:
    """Full time series and aggregates of one closed-loop run."""

    seed: int
    dt: float
    horizon: int
    uav_ids: tuple[int, ...]
    positions: dict
    velocities: dict
    references: dict
    errors: dict
    sinr: dict
    aoi: dict
    trigger_rows: list
    latencies_slots: list
    grants: dict
    deliveries: dict
    uplink_deliveries: dict
    underruns: dict
    handovers: dict
    energy_j: float
    max_speed_mps: float
    max_altitude_m: float
    input_saturations: int
    velocity_saturations: int

    def rms_error(self, uav_id: int) -> float:
        e = self.errors[uav_id]
        return float(np.sqrt(np.mean(e * e)))

    def mean_error(self, uav_id: int) -> float:
        return float(np.mean(self.errors[uav_id]))


@dataclass
class _UavRunState:
    spec: UavSpec
    state: UavState
    buffer: PpcBuffer
    noise_rng: Rng
    uplink_rng: Rng
    downlink_rng: Rng
    meas_rng: Rng
    next_trigger: int = 0
    etc_predictions: dict = field(default_factory=dict)  # slot -> predicted position Vec3
    last_exec_input: Vec3 | None = None  # what the BS believes ran last slot
    last_exec_from_packet: bool = False


def _policy_name(policy: TriggerPolicy) -> str:
    if isinstance(policy, PeriodicTrigger):
        return "periodic"
    if isinstance(policy, EtcTrigger):
        return "etc"
    return "stmpc"


def _wants_exchange(u: _UavRunState, slot: int) -> bool:
    policy = u.spec.trigger
    if isinstance(policy, EtcTrigger):
        pred = u.etc_predictions.get(slot)
        if pred is None:
            return True
        predicted = UavState(pred, Vec3.zero(), slot)
        return etc_should_trigger(u.state, predicted, policy.threshold_m)
    return slot >= u.next_trigger


def _clamp_to_domain(radio_map: RadioMap, p: Vec3) -> Vec3:
    g = radio_map.grid_max()
    o = radio_map.origin
    return Vec3(
        min(max(p.x, o.x), g.x),
        min(max(p.y, o.y), g.y),
        min(max(p.z, o.z), g.z),
    )


def _risk_flag(scenario: Scenario, ref_point: Vec3, slot: int) -> bool:
    r = scenario.scheduler.risk_radius_m
    if scenario.statics or scenario.movers:
        clearance = collision_check(ref_point, 0.0, list(scenario.statics), list(scenario.movers), slot)
        if clearance <= r:
            return True
    return any(b.contains(ref_point) for b in scenario.scheduler.high_risk_boxes)


def run_closed_loop(
    scenario: Scenario,
    runtime: Runtime | None = None,
    n_uavs: int | None = None,
    m_slots: int | None = None,
    seed: int | None = None,
    trigger_override: TriggerPolicy | None = None,
) -> RunMetrics:
    """Run the scenario for its whole horizon and collect the run record.

    Optional overrides narrow the fleet to its first n UAVs, change the
    per-slot grant budget, reseed the run, or swap every UAV's trigger
    policy; everything else comes from the scenario.
    """
    specs = list(scenario.uavs)
    if n_uavs is not None:
        specs = specs[:n_uavs]
    if trigger_override is not None:
        specs = [replace(s, trigger=trigger_override) for s in specs]
    run_seed = scenario.seed if seed is None else seed
    m_grant = scenario.scheduler.m_slots if m_slots is None else m_slots

    if runtime is None:
        runtime = prepare_runtime(scenario, uav_ids=[s.uav_id for s in specs])
    radio_map = runtime.radio_map
    plant = scenario.plant
    link = scenario.link
    dist = scenario.disturbance
    statics = list(scenario.statics)
    movers = list(scenario.movers)
    horizon = scenario.horizon_slots

    uavs: list[_UavRunState] = []
    contexts: list[UavContext] = []
    for s in specs:
        start_state = UavState(s.start, Vec3.zero(), 0)
        uavs.append(
            _UavRunState(
                spec=s,
                state=start_state,
                buffer=PpcBuffer(u_max=plant.u_max),
                noise_rng=Rng(run_seed, stream_id(STREAM_NOISE, s.uav_id)),
                uplink_rng=Rng(run_seed, stream_id(STREAM_UPLINK, s.uav_id)),
                downlink_rng=Rng(run_seed, stream_id(STREAM_DOWNLINK, s.uav_id)),
                meas_rng=Rng(run_seed, stream_id(STREAM_MEAS, s.uav_id)),
            )
        )
        contexts.append(
            UavContext(
                uav_id=s.uav_id,
                estimate=start_state,
                cov=scenario.scheduler.r_meas,
                aoi=0,
            )
        )

    meas_w, meas_v = np.linalg.eigh(scenario.scheduler.r_meas.m)
    meas_factor = meas_v * np.sqrt(np.clip(meas_w, 0.0, None))

    ids = tuple(s.uav_id for s in specs)
    T = horizon
    positions = {i: np.zeros((T, 3)) for i in ids}
    velocities = {i: np.zeros((T, 3)) for i in ids}
    references = {i: np.zeros((T, 3)) for i in ids}
    errors = {i: np.zeros(T) for i in ids}
    sinr_series = {i: np.zeros(T) for i in ids}
    aoi_series = {i: np.zeros(T, dtype=int) for i in ids}
    trigger_rows: list[TriggerRow] = []
    latencies: list[int] = []
    grants = {i: 0 for i in ids}
    deliveries = {i: 0 for i in ids}
    uplink_deliveries = {i: 0 for i in ids}
    underruns = {i: 0 for i in ids}
    input_sat = 0
    vel_sat = 0
    max_speed = 0.0
    max_alt = -math.inf

    by_id = {u.spec.uav_id: u for u in uavs}
    ctx_by_id = lambda cs: {c.uav_id: c for c in cs}  # noqa: E731

    for k in range(T):
        # 1. belief propagation: estimates advance from slot k-1 to slot k
        if k > 0:
            believed = {}
            for u in uavs:
                if u.last_exec_from_packet and u.last_exec_input is not None:
                    believed[u.spec.uav_id] = u.last_exec_input
                else:
                    est = ctx_by_id(contexts)[u.spec.uav_id].estimate
                    damped = np.clip(
                        -u.buffer.fallback_gain * est.velocity.as_array(), -plant.u_max, plant.u_max
                    )
                    believed[u.spec.uav_id] = Vec3.from_array(damped)
            contexts = update_beliefs(
                contexts, SlotSchedule(slot=k, granted=()), {}, plant, scenario.scheduler.r_meas, believed
            )

        # risk context from the reference points at this slot
        cmap = ctx_by_id(contexts)
        contexts = [
            replace(
                cmap[i],
                risk_flag=_risk_flag(scenario, runtime.trajectories[i].position_at(k), k),
            )
            for i in ids
        ]
        cmap = ctx_by_id(contexts)

        # 2. trigger requests
        requests = [u.spec.uav_id for u in uavs if _wants_exchange(u, k)]

        # 3. schedule among the requesting UAVs
        sched = schedule_slot([cmap[i] for i in requests], m_grant, scenario.scheduler.weights, slot=k)

        # 4. uplink draws; a delivered report pins the belief to the measured
        # state (true state plus sensor noise drawn from R_meas)
        outcomes: dict[int, UplinkOutcome] = {}
        slot_sinr: dict[int, float] = {}
        for i in ids:
            slot_sinr[i] = sinr_at(radio_map, _clamp_to_domain(radio_map, by_id[i].state.position))
        for i in sched.granted:
            u = by_id[i]
            measured = UavState.from_vector(
                u.state.as_vector() + meas_factor @ u.meas_rng.normals(6), k
            )
            ok = packet_outcome(link, slot_sinr[i], u.uplink_rng)
            outcomes[i] = UplinkOutcome(delivered=ok, reported=measured if ok else None)
            if ok:
                uplink_deliveries[i] += 1
        contexts = [
            replace(c, estimate=outcomes[c.uav_id].reported, cov=scenario.scheduler.r_meas, aoi=0)
            if c.uav_id in outcomes and outcomes[c.uav_id].delivered
            else c
            for c in contexts
        ]
        cmap = ctx_by_id(contexts)

        # 5. control solves and downlink draws for granted UAVs
        arrivals: dict[int, ControlPacket] = {}
        packet_lens: dict[int, int] = {}
        model_eff = plant
        if scenario.gust_q_extra is not None and dist.gust_active(k):
            model_eff = plant.with_q(mat_psd_project(plant.q.m + scenario.gust_q_extra))
        for i in sched.granted:
            u = by_id[i]
            traj = runtime.trajectories[i]
            policy = u.spec.trigger
            if isinstance(policy, StmpcTrigger):
                preview = [traj.position_at(k + j) for j in range(1, policy.horizon_max + 1)]
                horizon_l = stmpc_length(
                    model_eff, cmap[i].cov, preview, statics, movers, policy, start_slot=k
                )
                horizon_l = min(horizon_l, u.spec.mpc.horizon_max)
            else:
                horizon_l = u.spec.mpc.horizon_max
            packet_lens[i] = horizon_l
            x0 = cmap[i].estimate  # measured state when the uplink arrived, belief otherwise
            packet = _solve_packet(plant, x0, traj, k, horizon_l, u.spec.mpc)
            grants[i] += 1
            if packet_outcome(link, slot_sinr[i], u.downlink_rng):
                arrivals[i] = packet
                deliveries[i] += 1
            contexts = [
                replace(c, last_packet=PacketMeta(issue_slot=k, length=horizon_l)) if c.uav_id == i else c
                for c in contexts
            ]
        cmap = ctx_by_id(contexts)

        # 6. buffer execution on every UAV; sensed gust bias is fed forward so
        # the nominal no-gust model stays valid for plant and beliefs alike
        comp = Vec3.zero()
        if scenario.gust_compensation and dist.gust_active(k):
            comp = dist.gust_bias
        execs = {}
        applied: dict[int, Vec3] = {}
        for u in uavs:
            i = u.spec.uav_id
            pkt = arrivals.get(i)
            rec = buffer_execute(u.buffer, k, pkt, u.state.velocity)
            execs[i] = rec
            applied[i] = Vec3.from_array(
                np.clip((rec.accel - comp).as_array(), -plant.u_max, plant.u_max)
            )
            if rec.from_packet:
                latencies.append(k - u.buffer.packet.issue_slot)
            else:
                underruns[i] += 1
            u.last_exec_input = rec.accel if rec.from_packet else None
            u.last_exec_from_packet = rec.from_packet
            if pkt is not None:
                if isinstance(u.spec.trigger, StmpcTrigger):
                    u.next_trigger = k + pkt.length
                elif isinstance(u.spec.trigger, EtcTrigger):
                    u.etc_predictions = _rollout_predictions(plant, u.state, pkt, k)
            if isinstance(u.spec.trigger, PeriodicTrigger) and i in requests:
                u.next_trigger = k + u.spec.trigger.period

        # 7. plant steps
        for u in uavs:
            i = u.spec.uav_id
            positions[i][k] = u.state.position.as_array()
            velocities[i][k] = u.state.velocity.as_array()
            ref_p = runtime.trajectories[i].position_at(k)
            references[i][k] = ref_p.as_array()
            errors[i][k] = u.state.position.distance_to(ref_p)
            sinr_series[i][k] = slot_sinr[i]
            aoi_series[i][k] = cmap[i].aoi
            max_speed = max(max_speed, u.state.speed())
            max_alt = max(max_alt, u.state.position.z)

            out = step(plant, u.state, applied[i], dist, u.noise_rng)
            input_sat += int(out.input_saturated)
            vel_sat += int(out.velocity_saturated)
            u.state = out.state

        # 8. metrics rows
        for u in uavs:
            i = u.spec.uav_id
            granted = i in sched.granted
            trigger_rows.append(
                TriggerRow(
                    slot=k,
                    uav=i,
                    policy=_policy_name(u.spec.trigger),
                    triggered=int(granted),
                    packet_len=packet_lens.get(i, 0),
                    delivered=int(i in arrivals),
                    buffer_cursor=execs[i].cursor,
                    underrun=int(execs[i].underrun),
                )
            )

    energy = link.energy_per_packet_j * sum(grants.values())
    handovers = {
        i: handover_count(
            radio_map,
            [_clamp_to_domain(radio_map, Vec3.from_array(row)) for row in positions[i]],
        )
        for i in ids
    }
    return RunMetrics(
        seed=run_seed,
        dt=plant.dt,
        horizon=T,
        uav_ids=ids,
        positions=positions,
        velocities=velocities,
        references=references,
        errors=errors,
        sinr=sinr_series,
        aoi=aoi_series,
        trigger_rows=trigger_rows,
        latencies_slots=latencies,
        grants=grants,
        deliveries=deliveries,
        uplink_deliveries=uplink_deliveries,
        underruns=underruns,
        handovers=handovers,
        energy_j=energy,
        max_speed_mps=max_speed,
        max_altitude_m=max_alt,
        input_saturations=input_sat,
        velocity_saturations=vel_sat,
    )


def _solve_packet(plant: PlantModel, x0: UavState, traj, k: int, length: int, weights: MpcWeights) -> ControlPacket:
    """Tracking solve in deviation coordinates plus reference-accel feedforward.

    The quadratic solver regulates the deviation from the reference to zero;
    the acceleration the reference itself performs is added back to every
    input. Executed open loop, plans built this way do not lag maneuvering
    references the way absolute-effort-penalized plans do.
    """
    from .planner import RefSegment

    seg = traj.segment(k, length)
    ref_p0 = traj.position_at(k).as_array()
    ref_v0 = traj.velocity_at(k).as_array()
    vs = np.vstack([ref_v0, seg.velocities])
    u_ff = (vs[1:] - vs[:-1]) / plant.dt

    dev0 = UavState(
        Vec3.from_array(x0.position.as_array() - ref_p0),
        Vec3.from_array(x0.velocity.as_array() - ref_v0),
        k,
    )
    zero_seg = RefSegment(
        positions=np.zeros((length, 3)), velocities=np.zeros((length, 3))
    )
    dev_pkt = solve_mpc(plant, dev0, zero_seg, weights, length)
    inputs = []
    for l, du in enumerate(dev_pkt.inputs):
        u = np.clip(du.as_array() + u_ff[l], -plant.u_max, plant.u_max)
        inputs.append(Vec3.from_array(u))
    return ControlPacket(issue_slot=k, inputs=tuple(inputs))


def _rollout_predictions(plant: PlantModel, x0: UavState, pkt: ControlPacket, slot: int) -> dict:
    """Nominal positions the UAV expects while executing the packet open loop."""
    preds = {}
    xv = x0.as_vector()
    for j, u in enumerate(pkt.inputs, start=1):
        xv = plant.a @ xv + plant.b @ u.as_array()
        preds[slot + j] = Vec3.from_array(xv[0:3])
    return preds


def summarize(run: RunMetrics) -> SwarmMetrics:
    """Reduce a run record to swarm-level figures."""
    ids = run.uav_ids
    mean_errors = tuple(run.mean_error(i) for i in ids)
    return SwarmMetrics(
        n_uavs=len(ids),
        horizon=run.horizon,
        seed=run.seed,
        rms_error_m=tuple(run.rms_error(i) for i in ids),
        mean_error_m=mean_errors,
        mean_aoi=tuple(float(np.mean(run.aoi[i])) for i in ids),
        max_aoi=int(max(np.max(run.aoi[i]) for i in ids)) if ids else 0,
        underruns=tuple(run.underruns[i] for i in ids),
        grants=tuple(run.grants[i] for i in ids),
        avg_ctrl_error_m=float(np.mean(mean_errors)) if ids else 0.0,
        energy_j=run.energy_j,
        run=run,
    )
