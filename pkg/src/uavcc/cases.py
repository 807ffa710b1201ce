"""The two shipped case studies: single-UAV co-design and swarm scheduling.

Case 1 runs the same seeded scenario under periodic every-slot control and
under self-triggered control, and reports the communication-energy
reduction with the tracking cost of riding packets open loop. Case 2
sweeps fleet size N against the per-slot grant budget M and tabulates the
swarm-average control error.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controller import PeriodicTrigger, StmpcTrigger
from .core import mix64
from .engine import RunMetrics, Runtime, prepare_runtime, run_closed_loop, summarize
from .reports import _f, write_trace_csv, write_triggers_csv
from .scenario import Scenario, ScenarioError

__all__ = [
    "Case1Row",
    "Case1Report",
    "Case2Row",
    "run_case1",
    "run_case2",
    "case_seed",
    "emit_case1",
    "emit_case2",
]


def case_seed(base_seed: int, n: int, m: int, replicate: int) -> int:
    """Per-run seed for a sweep cell: base xor a stable hash of (N, M, replicate)."""
    return (base_seed ^ mix64(n, m, replicate)) & 0x7FFFFFFFFFFFFFFF


@dataclass(frozen=True)
class Case1Row:
    seed: int
    energy_periodic_j: float
    energy_stmpc_j: float
    rms_periodic_m: float
    rms_stmpc_m: float

    @property
    def reduction(self) -> float:
        if self.energy_periodic_j == 0:
            return 0.0
        return 1.0 - self.energy_stmpc_j / self.energy_periodic_j


@dataclass(frozen=True)
class Case1Report:
    rows: tuple[Case1Row, ...]
    mean_reduction: float
    rms_ratio: float  # mean stmpc RMS over mean periodic RMS
    periodic_run0: RunMetrics
    stmpc_run0: RunMetrics


def run_case1(scenario: Scenario, seeds: list[int] | None = None, runtime: Runtime | None = None) -> Case1Report:
    """Periodic-every-slot MPC vs ST-MPC on the same seeds, single UAV.

    Both arms share every random stream, so the comparison isolates the
    trigger policy. The scenario must contain exactly one UAV configured
    with the self-triggered policy.
    """
    if len(scenario.uavs) != 1:
        raise ScenarioError(f"case1 needs a single-UAV scenario, got {len(scenario.uavs)} UAVs")
    if not isinstance(scenario.uavs[0].trigger, StmpcTrigger):
        raise ScenarioError("case1 expects the UAV trigger policy to be 'stmpc'")
    if seeds is None:
        seeds = [case_seed(scenario.seed, 1, 1, r) for r in range(10)]
    if runtime is None:
        runtime = prepare_runtime(scenario)

    rows = []
    periodic_run0 = stmpc_run0 = None
    for seed in seeds:
        per = run_closed_loop(
            scenario, runtime=runtime, seed=seed, trigger_override=PeriodicTrigger(period=1)
        )
        st = run_closed_loop(scenario, runtime=runtime, seed=seed)
        if periodic_run0 is None:
            periodic_run0, stmpc_run0 = per, st
        uid = scenario.uavs[0].uav_id
        rows.append(
            Case1Row(
                seed=seed,
                energy_periodic_j=per.energy_j,
                energy_stmpc_j=st.energy_j,
                rms_periodic_m=per.rms_error(uid),
                rms_stmpc_m=st.rms_error(uid),
            )
        )

    mean_reduction = float(np.mean([r.reduction for r in rows]))
    mean_rms_p = float(np.mean([r.rms_periodic_m for r in rows]))
    mean_rms_s = float(np.mean([r.rms_stmpc_m for r in rows]))
    ratio = mean_rms_s / mean_rms_p if mean_rms_p > 0 else float("inf")
    return Case1Report(
        rows=tuple(rows),
        mean_reduction=mean_reduction,
        rms_ratio=ratio,
        periodic_run0=periodic_run0,
        stmpc_run0=stmpc_run0,
    )


@dataclass(frozen=True)
class Case2Row:
    n: int
    m: int
    replicate: int
    avg_ctrl_err_m: float
    max_aoi: int
    underruns: int
    grants_total: int
    energy_j: float


def run_case2(
    scenario: Scenario,
    n_list: list[int] | None = None,
    m_list: list[int] | None = None,
    replicates: int = 10,
    runtime: Runtime | None = None,
) -> list[Case2Row]:
    """Sweep (N, M, replicate) cells of the swarm scenario, merged by key."""
    n_list = list(n_list if n_list is not None else scenario.sweep_n)
    m_list = list(m_list if m_list is not None else scenario.sweep_m)
    if not n_list or not m_list:
        raise ScenarioError("case2 needs sweep lists for N and M (scenario sweep.n / sweep.m)")
    if max(n_list) > len(scenario.uavs):
        raise ScenarioError(f"sweep N {max(n_list)} exceeds fleet size {len(scenario.uavs)}")
    if runtime is None:
        runtime = prepare_runtime(scenario)

    rows = []
    for n in n_list:
        for m in m_list:
            for r in range(replicates):
                run = run_closed_loop(
                    scenario,
                    runtime=runtime,
                    n_uavs=n,
                    m_slots=m,
                    seed=case_seed(scenario.seed, n, m, r),
                )
                swarm = summarize(run)
                rows.append(
                    Case2Row(
                        n=n,
                        m=m,
                        replicate=r,
                        avg_ctrl_err_m=swarm.avg_ctrl_error_m,
                        max_aoi=swarm.max_aoi,
                        underruns=sum(swarm.underruns),
                        grants_total=sum(swarm.grants),
                        energy_j=swarm.energy_j,
                    )
                )
    rows.sort(key=lambda row: (row.n, row.m, row.replicate))
    return rows


def emit_case1(report: Case1Report, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    runs_csv = out_dir / "case1_runs.csv"
    with open(runs_csv, "w", newline="") as f:
        f.write("seed,energy_periodic_j,energy_stmpc_j,rms_periodic_m,rms_stmpc_m,reduction\n")
        for r in report.rows:
            f.write(
                f"{r.seed},{_f(r.energy_periodic_j)},{_f(r.energy_stmpc_j)},"
                f"{_f(r.rms_periodic_m)},{_f(r.rms_stmpc_m)},{_f(r.reduction)}\n"
            )
    written.append(runs_csv)

    uid = report.stmpc_run0.uav_ids[0]
    for tag, run in (("periodic", report.periodic_run0), ("stmpc", report.stmpc_run0)):
        p = out_dir / f"case1_trace_uav{uid}_{tag}.csv"
        write_trace_csv(run, uid, p)
        written.append(p)
        p = out_dir / f"case1_triggers_{tag}.csv"
        write_triggers_csv(run, p)
        written.append(p)

    summary = out_dir / "case1_summary.txt"
    lines = [
        f"seeds: {len(report.rows)}",
        f"mean_energy_reduction: {_f(report.mean_reduction)}",
        f"rms_ratio_stmpc_over_periodic: {_f(report.rms_ratio)}",
        f"mean_energy_periodic_j: {_f(float(np.mean([r.energy_periodic_j for r in report.rows])))}",
        f"mean_energy_stmpc_j: {_f(float(np.mean([r.energy_stmpc_j for r in report.rows])))}",
        f"mean_rms_periodic_m: {_f(float(np.mean([r.rms_periodic_m for r in report.rows])))}",
        f"mean_rms_stmpc_m: {_f(float(np.mean([r.rms_stmpc_m for r in report.rows])))}",
    ]
    summary.write_text("\n".join(lines) + "\n")
    written.append(summary)
    return written


def emit_case2(rows: list[Case2Row], out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    sweep_csv = out_dir / "case2_sweep.csv"
    with open(sweep_csv, "w", newline="") as f:
        f.write("N,M,seed,avg_ctrl_err_m,max_aoi,underruns,grants_total,energy_J\n")
        for r in rows:
            f.write(
                f"{r.n},{r.m},{r.replicate},{_f(r.avg_ctrl_err_m)},{r.max_aoi},"
                f"{r.underruns},{r.grants_total},{_f(r.energy_j)}\n"
            )
    written.append(sweep_csv)

    cells: dict[tuple[int, int], list[float]] = {}
    for r in rows:
        cells.setdefault((r.n, r.m), []).append(r.avg_ctrl_err_m)
    summary = out_dir / "case2_summary.txt"
    lines = ["mean avg_ctrl_err_m per (N, M) cell:"]
    for (n, m) in sorted(cells):
        lines.append(f"N={n} M={m}: {_f(float(np.mean(cells[(n, m)])))}")
    summary.write_text("\n".join(lines) + "\n")
    written.append(summary)
    return written
