"""Command-line entry point: sim <subcommand> <scenario> [...].

Exit codes: 0 ok, 2 configuration error, 3 infeasible plan, 4 compliance
failure (check subcommand only).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import cases, engine, reports
from .core import ValidationError
from .planner import PlanError
from .radio import build_radio_map, export_radio_map_csv
from .requirements import check_compliance, profile_by_name
from .scenario import ScenarioError, builtin_scenario_path, load_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NONCOMPLIANT = 4


def _resolve_scenario(arg: str):
    p = Path(arg)
    if p.exists():
        return load_scenario(p)
    builtin = builtin_scenario_path(arg)
    if builtin.exists():
        return load_scenario(builtin)
    raise ScenarioError(f"scenario file not found: {arg} (builtins: case1, case2)")


def _parse_sweep(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as e:
        raise ScenarioError(f"bad sweep list {text!r}: {e}") from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sim", description="cellular-connected UAV co-design simulator")
    ap.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    ap.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory")
    ap.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("radio-map", help="build the SINR map and export it as CSV")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", type=Path, default=None)

    p = sub.add_parser("plan", help="plan one UAV's reference trajectory")
    p.add_argument("scenario")
    p.add_argument("--uav", type=int, default=None, help="uav id (default: the first)")
    p.add_argument("-o", "--output", type=Path, default=None)

    p = sub.add_parser("run", help="run the scenario once and emit trace/trigger CSVs")
    p.add_argument("scenario")

    p = sub.add_parser("case1", help="periodic vs self-triggered comparison")
    p.add_argument("scenario")
    p.add_argument("--seeds", type=int, default=10, help="number of replicate seeds")

    p = sub.add_parser("case2", help="swarm N x M sweep")
    p.add_argument("scenario")
    p.add_argument("--sweep", type=str, default=None, help="override lists, e.g. N=4,8 (see --sweep-m)")
    p.add_argument("--sweep-m", type=str, default=None, help="override M list, e.g. 2,4")
    p.add_argument("--seeds", type=int, default=10, help="replicates per sweep cell")

    p = sub.add_parser("check", help="run and check against a service profile")
    p.add_argument("scenario")
    p.add_argument("--profile", type=str, default=None, help="profile name (default: scenario's)")
    p.add_argument("--lenient", action="store_true", help="check the lenient bound of range cells")
    return ap


def _say(args, *parts):
    if not args.quiet:
        print(*parts)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = _resolve_scenario(args.scenario)
        if args.seed is not None:
            scenario = dataclasses.replace(scenario, seed=args.seed)
        out_dir: Path = args.out_dir

        if args.command == "radio-map":
            runtime_map = build_radio_map(scenario.environment, scenario.gamma_th_db)
            out = args.output or (out_dir / "radio_map.csv")
            out.parent.mkdir(parents=True, exist_ok=True)
            export_radio_map_csv(runtime_map, out)
            _say(args, f"radio map {runtime_map.shape} written to {out}")
            return EXIT_OK

        if args.command == "plan":
            uav_id = args.uav if args.uav is not None else scenario.uavs[0].uav_id
            runtime = engine.prepare_runtime(scenario, uav_ids=[uav_id])
            out = args.output or (out_dir / f"plan_uav{uav_id}.csv")
            out.parent.mkdir(parents=True, exist_ok=True)
            reports.write_plan_csv(runtime.trajectories[uav_id], runtime.radio_map, out)
            _say(args, f"plan for uav {uav_id} written to {out}")
            return EXIT_OK

        if args.command == "run":
            run = engine.run_closed_loop(scenario)
            written = reports.emit_report(run, out_dir)
            for p in written:
                _say(args, f"wrote {p}")
            return EXIT_OK

        if args.command == "case1":
            seeds = [cases.case_seed(scenario.seed, 1, 1, r) for r in range(args.seeds)]
            report = cases.run_case1(scenario, seeds=seeds)
            written = cases.emit_case1(report, out_dir)
            for p in written:
                _say(args, f"wrote {p}")
            _say(
                args,
                f"mean energy reduction: {report.mean_reduction:.1%}, "
                f"rms ratio stmpc/periodic: {report.rms_ratio:.3f}",
            )
            return EXIT_OK

        if args.command == "case2":
            n_list = _parse_sweep(args.sweep.split("=", 1)[-1]) if args.sweep else None
            m_list = _parse_sweep(args.sweep_m) if args.sweep_m else None
            rows = cases.run_case2(scenario, n_list=n_list, m_list=m_list, replicates=args.seeds)
            written = cases.emit_case2(rows, out_dir)
            for p in written:
                _say(args, f"wrote {p}")
            return EXIT_OK

        if args.command == "check":
            profile_name = args.profile or scenario.profile
            if profile_name is None:
                raise ScenarioError("no profile: pass --profile or set 'profile' in the scenario")
            profile = profile_by_name(profile_name)
            run = engine.run_closed_loop(scenario)
            metrics = reports.compliance_metrics_from_run(run, scenario)
            report = check_compliance(metrics, profile, strict=not args.lenient)
            print(report.render())
            return EXIT_OK if report.passed else EXIT_NONCOMPLIANT

        raise ScenarioError(f"unknown command {args.command!r}")
    except (ScenarioError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PlanError as e:
        print(f"infeasible plan: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
