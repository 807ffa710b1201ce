"""CSV and text emission for runs, plus compliance metric extraction.

Everything written here is plain CSV or text with repr-formatted floats, so
identical runs produce byte-identical files. No plotting dependencies; the
CSV contracts are documented in the README.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .engine import RunMetrics, summarize
from .planner import ReferenceTrajectory
from .radio import RadioMap, sinr_at
from .requirements import RunComplianceMetrics
from .scenario import Scenario
from .core import Vec3

__all__ = [
    "write_trace_csv",
    "write_triggers_csv",
    "write_plan_csv",
    "write_summary",
    "emit_report",
    "compliance_metrics_from_run",
]


def _f(v: float) -> str:
    return repr(float(v))


def write_trace_csv(run: RunMetrics, uav_id: int, path: Path) -> None:
    """Per-slot state trace: slot,x,y,z,vx,vy,vz,ref_x,ref_y,ref_z,err_m,sinr_db,aoi."""
    with open(path, "w", newline="") as f:
        f.write("slot,x,y,z,vx,vy,vz,ref_x,ref_y,ref_z,err_m,sinr_db,aoi\n")
        for k in range(run.horizon):
            p = run.positions[uav_id][k]
            v = run.velocities[uav_id][k]
            r = run.references[uav_id][k]
            f.write(
                f"{k},{_f(p[0])},{_f(p[1])},{_f(p[2])},"
                f"{_f(v[0])},{_f(v[1])},{_f(v[2])},"
                f"{_f(r[0])},{_f(r[1])},{_f(r[2])},"
                f"{_f(run.errors[uav_id][k])},{_f(run.sinr[uav_id][k])},{int(run.aoi[uav_id][k])}\n"
            )


def write_triggers_csv(run: RunMetrics, path: Path) -> None:
    """Trigger log: slot,uav,policy,triggered,packet_len,delivered,buffer_cursor,underrun."""
    with open(path, "w", newline="") as f:
        f.write("slot,uav,policy,triggered,packet_len,delivered,buffer_cursor,underrun\n")
        for row in run.trigger_rows:
            f.write(
                f"{row.slot},{row.uav},{row.policy},{row.triggered},"
                f"{row.packet_len},{row.delivered},{row.buffer_cursor},{row.underrun}\n"
            )


def write_plan_csv(traj: ReferenceTrajectory, radio_map: RadioMap, path: Path) -> None:
    """Planned reference: slot,x,y,z,vx,vy,vz,sinr_db,serving_bs."""
    with open(path, "w", newline="") as f:
        f.write("slot,x,y,z,vx,vy,vz,sinr_db,serving_bs\n")
        for k in range(len(traj)):
            p = traj.positions[k]
            v = traj.velocities[k]
            point = Vec3.from_array(p)
            s = sinr_at(radio_map, point)
            cell = radio_map.cell_of(point)
            bs = int(radio_map.serving_bs[cell])
            f.write(
                f"{k},{_f(p[0])},{_f(p[1])},{_f(p[2])},"
                f"{_f(v[0])},{_f(v[1])},{_f(v[2])},{_f(s)},{bs}\n"
            )


def write_summary(run: RunMetrics, path: Path) -> None:
    swarm = summarize(run)
    lines = [
        f"seed: {run.seed}",
        f"horizon_slots: {run.horizon}",
        f"dt_s: {_f(run.dt)}",
        f"uavs: {len(run.uav_ids)}",
        f"energy_j: {_f(run.energy_j)}",
        f"grants_total: {sum(run.grants.values())}",
        f"deliveries_total: {sum(run.deliveries.values())}",
        f"underruns_total: {sum(run.underruns.values())}",
        f"max_aoi: {swarm.max_aoi}",
        f"avg_ctrl_error_m: {_f(swarm.avg_ctrl_error_m)}",
        f"max_speed_mps: {_f(run.max_speed_mps)}",
        f"max_altitude_m: {_f(run.max_altitude_m)}",
        f"input_saturations: {run.input_saturations}",
        f"velocity_saturations: {run.velocity_saturations}",
    ]
    for i in run.uav_ids:
        lines.append(
            f"uav {i}: rms_err_m={_f(run.rms_error(i))} grants={run.grants[i]} "
            f"deliveries={run.deliveries[i]} underruns={run.underruns[i]} handovers={run.handovers[i]}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def emit_report(run: RunMetrics, out_dir: Path, prefix: str = "") -> list[Path]:
    """Standard per-run artifact set: one trace per UAV, triggers, summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i in run.uav_ids:
        p = out_dir / f"{prefix}trace_uav{i}.csv"
        write_trace_csv(run, i, p)
        written.append(p)
    p = out_dir / f"{prefix}triggers.csv"
    write_triggers_csv(run, p)
    written.append(p)
    p = out_dir / f"{prefix}summary.txt"
    write_summary(run, p)
    written.append(p)
    return written


def compliance_metrics_from_run(run: RunMetrics, scenario: Scenario) -> RunComplianceMetrics:
    """Extract the quantities the requirements module checks.

    Delivery rate pools both legs of every exchange (state up, command
    down); command latency is issue-to-execution in slots scaled by the slot
    duration; accuracies are 95th percentiles over all UAVs and slots.
    """
    grants_total = sum(run.grants.values())
    legs_attempted = 2 * grants_total
    legs_ok = sum(run.uplink_deliveries.values()) + sum(run.deliveries.values())
    delivery_rate = 1.0 if legs_attempted == 0 else legs_ok / legs_attempted

    h_errs = []
    v_errs = []
    for i in run.uav_ids:
        d = run.positions[i] - run.references[i]
        h_errs.append(np.hypot(d[:, 0], d[:, 1]))
        v_errs.append(np.abs(d[:, 2]))
    h_p95 = float(np.percentile(np.concatenate(h_errs), 95)) if h_errs else 0.0
    v_p95 = float(np.percentile(np.concatenate(v_errs), 95)) if v_errs else 0.0

    slot_ms = run.dt * 1000.0
    return RunComplianceMetrics(
        delivery_rate=delivery_rate,
        cmd_latency_ms=tuple(l * slot_ms for l in run.latencies_slots),
        h_error_p95_m=h_p95,
        v_error_p95_m=v_p95,
        max_speed_mps=run.max_speed_mps,
        max_altitude_m=run.max_altitude_m if run.max_altitude_m > -math.inf else 0.0,
        link_latency_ms=slot_ms,
        offered_ul_mbps=scenario.offered_ul_mbps,
        offered_dl_mbps=scenario.offered_dl_mbps,
    )
