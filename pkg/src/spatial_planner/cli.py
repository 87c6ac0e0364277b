"""Command-line entry point: ``spatial-planner {run,profile,bench}``.

Exit codes: 0 on completion, 1 on a malformed scenario or bad arguments,
2 when the run ends in a collision.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, scenario as scn, sim
from .scenario import CONSTRAINT_SETS, Scenario, ScenarioError

OUT_ENV = "SPATIAL_PLANNER_OUT"
EXIT_OK, EXIT_ERROR, EXIT_COLLISION = 0, 1, 2
BENCH_ROWS = (
    ("lateral", "lateral"),
    ("longitudinal", "longitudinal"),
    ("total (lat. + lon. + preproc.)", "total"),
)


def load_scenario(ref: str) -> Scenario:
    """Load a scenario from a path, or by name from the bundled set."""
    path = Path(ref)
    if path.exists():
        return scn.load(path)
    bundled = scn.bundled_dir() / (ref if ref.endswith(".json") else ref + ".json")
    if bundled.exists():
        return scn.load(bundled)
    raise ScenarioError(f"no such scenario file or bundled scenario: {ref}")


def _out_dir(args, sc: Scenario, constraint_set: str) -> Path:
    if args.out:
        return Path(args.out)
    base = Path(os.environ.get(OUT_ENV, "runs"))
    return base / f"{sc.name or 'scenario'}_{constraint_set}"


def format_bench_table(runtime_ms: dict) -> str:
    lines = [f"{'component':<32}{'mean [ms]':>12}{'stddev [ms]':>14}{'max [ms]':>12}"]
    for label, key in BENCH_ROWS:
        st = runtime_ms[key]
        lines.append(f"{label:<32}{st['mean']:>12.3f}{st['std']:>14.3f}{st['max']:>12.3f}")
    return "\n".join(lines)


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    cs = args.constraint_set or sc.sim.constraint_set
    out = _out_dir(args, sc, cs)
    result = sim.run_scenario(
        sc, duration=args.duration, out_dir=out, constraint_set=cs, cold_start=args.cold_start,
        budget_ms=args.budget_ms, seed=args.seed, profile_stride=args.profile_stride,
        write_timings=args.timings,
    )
    v = result.verdict
    print(f"scenario {sc.name}  constraint set {cs}  cycles {len(result.logs)}")
    if v.collision:
        print(f"collision with {v.collided_with} at t = {v.collision_time:.2f} s")
    else:
        print("no collision")
    for a in v.arrivals:
        when = "never reached" if a.time is None else f"t = {a.time:.3f} s"
        bound = ">=" if a.kind == "min" else "<="
        flag = "ok" if a.satisfied else ("VIOLATED" if a.enforced else "missed (not enforced)")
        print(f"  {a.name or a.kind} at s = {a.s:g} m: {when} (bound {bound} {a.bound:g} s) {flag}")
    for r in v.red_light_violations:
        print(f"  ran red light {r['signal']} at t = {r['time']:.2f} s")
    print(f"acceleration range [{v.a_min_observed:.3f}, {v.a_max_observed:.3f}] m/s^2")
    print(f"constraints satisfied: {v.constraints_satisfied}")
    print(format_bench_table(v.runtime_ms))
    for k, p in result.outputs.items():
        print(f"{k}: {p}")
    return EXIT_COLLISION if v.collision else EXIT_OK


def _plan_at(sc: Scenario, at_time: float, constraint_set: Optional[str], seed: Optional[int]):
    cycle = int(round(at_time / sc.sim.dt))
    captured = {}

    def grab(c, t, ego, plan):
        if c == cycle:
            captured["plan"] = plan

    sim.run_scenario(sc, duration=(cycle + 1) * sc.sim.dt, constraint_set=constraint_set, seed=seed,
                     callback=grab, stop_on_collision=False, profile_stride=0)
    plan = captured.get("plan")
    if plan is None:
        raise RuntimeError(f"planner produced no solution at t = {at_time:g} s")
    return plan


def cmd_profile(args) -> int:
    sc = load_scenario(args.scenario)
    if args.at_time < 0 or args.at_time > sc.sim.duration:
        raise ValueError(f"--at-time {args.at_time:g} is outside [0, {sc.sim.duration:g}] s")
    plan = _plan_at(sc, args.at_time, args.constraint_set, args.seed)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["s", "v_lim", "v_ref", "v_star", "a_star", "t_star"])
        pr = plan.profile
        for row in zip(pr.grid.s, plan.limits.v_lim, plan.reference.v_ref, pr.v, pr.a, pr.t):
            w.writerow([f"{x:.9g}" for x in row])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.cycles < 100:
        raise ValueError("--cycles must be at least 100")
    sc = load_scenario(args.scenario)
    if args.horizon is not None:
        sc.grid.horizon = args.horizon
    if args.delta_s is not None:
        sc.grid.delta_s = args.delta_s
    scn.validate(sc)
    # one throwaway cycle so that compilation does not end up in the statistics
    sim.run_scenario(sc, duration=sc.sim.dt, profile_stride=0)
    result = sim.run_scenario(sc, duration=args.cycles * sc.sim.dt, stop_on_collision=False, profile_stride=0)
    K = int(round(sc.grid.horizon / sc.grid.delta_s))
    print(f"scenario {sc.name}  K = {K}  cycles {len(result.logs)}")
    print(format_bench_table(result.verdict.runtime_ms))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatial-planner", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="closed-loop simulation of a scenario")
    run.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    run.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./runs)")
    run.add_argument("--duration", type=float, help="simulated seconds (default: from the scenario)")
    run.add_argument("--seed", type=int, help="override the reference-noise seed")
    run.add_argument("--constraint-set", choices=CONSTRAINT_SETS, help="arrival-time constraints to enforce")
    run.add_argument("--cold-start", action="store_true", help="disable warm starts")
    run.add_argument("--budget-ms", type=float, help="reuse the previous plan when a cycle takes longer")
    run.add_argument("--profile-stride", type=int, help="snapshot every N-th plan into profiles.csv")
    run.add_argument("--timings", action="store_true", help="also write per-cycle timings.csv")
    run.set_defaults(func=cmd_run)

    prof = sub.add_parser("profile", help="one planning cycle, printed as CSV")
    prof.add_argument("scenario")
    prof.add_argument("--at-time", type=float, default=0.0, help="simulated time of the cycle [s]")
    prof.add_argument("--out", help="CSV file (default: stdout)")
    prof.add_argument("--seed", type=int)
    prof.add_argument("--constraint-set", choices=CONSTRAINT_SETS)
    prof.set_defaults(func=cmd_profile)

    bench = sub.add_parser("bench", help="planner runtime statistics")
    bench.add_argument("scenario")
    bench.add_argument("--cycles", type=int, default=1000)
    bench.add_argument("--horizon", type=float, help="override the grid horizon [m]")
    bench.add_argument("--delta-s", type=float, help="override the grid step [m]")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
