"""Command-line entry point: ``aeroprint {gen,plan,validate,sweep,export-lp}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from .instance import (MissionInstance, MissionParams, SchemaError, generate_rect_instance, load_instance,
                       save_instance)
from .model import build_model, export_lp
from .solver import Schedule, SolveLimits, SolveReport, solve, sweep_fleet
from .validate import check_schedule, emit_gantt, simulate

log = logging.getLogger("aeroprint")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TIMEOUT = 3
EXIT_INFEASIBLE = 4
EXIT_INVALID = 5

SWEEP_HEADER = ["M", "status", "makespan_s", "objective", "used_robots", "wall_s"]


class UsageError(Exception):
    """Bad flag combination or unreadable input; maps to exit code 2."""


@dataclass
class RunConfig:
    command: str
    inputs: tuple[str, ...]
    output: str | None
    variant: str = "p1"
    robots: tuple[int, int] | None = None
    gains: dict | None = None
    time_limit: float = 300.0
    dt: float = 0.1
    threads: int = 1


def parse_robots(text: str) -> tuple[int, int]:
    """``"6"`` -> (6, 6); ``"1..8"`` -> (1, 8)."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or A..B, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"robot count must be >= 1 and ranges increasing, got {text!r}")
    return lo, hi


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
    return v


def _non_negative(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (math.isfinite(v) and v >= 0):
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text!r}")
    return v


def _add_gains(p: argparse.ArgumentParser):
    p.add_argument("--gms", type=_non_negative, help="makespan weight G_ms")
    p.add_argument("--gim", type=_non_negative, help="importance weight G_im")
    p.add_argument("--gut", type=_non_negative, help="per-robot utilisation cost G_ut")
    p.add_argument("--delta", type=_non_negative, help="first-in-first-out buffer between conflicting segments (s)")


def _add_solve(p: argparse.ArgumentParser):
    p.add_argument("--variant", choices=["p1", "p2", "p3"], default="p1")
    p.add_argument("--time-limit", type=_positive, default=300.0, help="seconds per solve (default 300)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (accepted; the search itself runs on one)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aeroprint", description="Multi-UAV aerial printing scheduler")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic mission")
    g.add_argument("shape", choices=["rect"])
    g.add_argument("--size", type=_positive, nargs=3, metavar=("W", "L", "H"), default=[2.0, 2.0, 0.5])
    g.add_argument("--grid", type=int, nargs=3, metavar=("NX", "NY", "NZ"), default=[3, 3, 2])
    g.add_argument("--robots", type=parse_robots, default=(6, 6), help="fleet size stored in the file")
    g.add_argument("--capacity", type=_positive, help="material capacity per robot (L)")
    g.add_argument("--battery", type=_positive, help="flight time per robot (s)")
    g.add_argument("--layer-height", type=_positive, default=0.0625)
    g.add_argument("--raster-spacing", type=_positive, default=1 / 6)
    g.add_argument("-o", "--output", required=True)
    _add_gains(g)

    p = sub.add_parser("plan", help="solve for an optimal schedule")
    p.add_argument("mission")
    p.add_argument("--robots", type=parse_robots)
    p.add_argument("-o", "--output")
    _add_solve(p)
    _add_gains(p)

    v = sub.add_parser("validate", help="check and simulate a schedule")
    v.add_argument("mission")
    v.add_argument("schedule")
    v.add_argument("--dt", type=_positive, default=0.1)
    v.add_argument("--svg")
    v.add_argument("--csv")
    v.add_argument("-o", "--output", help="report JSON (default: standard output)")
    _add_gains(v)

    s = sub.add_parser("sweep", help="solve for a range of fleet sizes")
    s.add_argument("mission")
    s.add_argument("--robots", type=parse_robots, required=True)
    s.add_argument("-o", "--output", help="CSV file (default: standard output)")
    _add_solve(s)
    _add_gains(s)

    e = sub.add_parser("export-lp", help="write the MILP in CPLEX LP format")
    e.add_argument("mission")
    e.add_argument("--variant", choices=["p1", "p2", "p3"], default="p1")
    e.add_argument("--robots", type=parse_robots)
    e.add_argument("-o", "--output")
    _add_gains(e)
    return ap


def _overrides(args) -> dict:
    out = {}
    for flag, name in (("gms", "g_ms"), ("gim", "g_im"), ("gut", "g_ut"), ("delta", "fifo_buffer")):
        v = getattr(args, flag, None)
        if v is not None:
            out[name] = v
    return out


def _read_mission(path: str, overrides: dict) -> MissionInstance:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    try:
        inst = load_instance(text)
        return inst.with_params(**overrides) if overrides else inst
    except SchemaError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _single_robots(args, inst: MissionInstance) -> int:
    if args.robots is None:
        return inst.n_robots
    lo, hi = args.robots
    if lo != hi:
        raise UsageError("--robots takes a single count here, not a range")
    return lo


def _write(path: str | None, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def schedule_to_dict(instance: MissionInstance, rep: SolveReport, time_limit: float) -> dict:
    sched = rep.schedule
    return {
        "assignments": [{"task": i, "robot": k, "start_s": s}
                        for i, (k, s) in enumerate(zip(sched.robot_of, sched.starts))],
        "makespan_s": sched.makespan,
        "objective": rep.objective,
        "variant": rep.variant.value,
        "status": rep.status,
        "m_robots": rep.m_robots,
        "used_robots": sched.n_used,
        "objective_terms": {"j_ms": rep.j_ms, "j_im": rep.j_im, "j_ut": rep.j_ut},
        "bound": rep.bound,
        "gap": rep.gap,
        "nodes": rep.nodes,
        "wall_s": rep.wall_time,
        "params_used": {**asdict(instance.params), "m_robots": rep.m_robots, "time_limit_s": time_limit},
    }


def schedule_from_dict(instance: MissionInstance, doc: dict) -> Schedule:
    try:
        rows = sorted(doc["assignments"], key=lambda r: r["task"])
        robot_of = [int(r["robot"]) for r in rows]
        starts = [float(r["start_s"]) for r in rows]
        m = int(doc.get("m_robots", max(robot_of) + 1))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed schedule file: {exc!r}") from None
    if [r["task"] for r in rows] != list(range(instance.n_tasks)):
        raise UsageError("schedule must assign every task of the mission exactly once")
    if m < 1 or min(robot_of) < 0 or max(robot_of) >= m:
        raise UsageError("schedule references robots outside its fleet")
    if m != instance.n_robots:
        instance = instance.with_fleet(m)
    return Schedule.build(instance, robot_of, starts, m)


def cmd_gen(args) -> int:
    lo, hi = args.robots
    if lo != hi:
        raise UsageError("--robots takes a single count for gen")
    params = load_params(_overrides(args))
    inst = generate_rect_instance(*args.size, *args.grid, params, n_robots=lo, capacity_l=args.capacity,
                                  battery_s=args.battery, layer_height=args.layer_height,
                                  raster_spacing=args.raster_spacing)
    _write(args.output, save_instance(inst))
    print(f"wrote {inst.n_tasks} tasks, {len(inst.graph)} dependencies, "
          f"{len(inst.conflicts.pairs)} conflict pairs, {inst.n_robots} robots")
    return EXIT_OK


def load_params(overrides: dict) -> MissionParams:
    try:
        return MissionParams(**overrides)
    except SchemaError as exc:
        raise UsageError(str(exc)) from None


def _status_line(rep: SolveReport) -> str:
    if rep.schedule is None:
        return f"status={rep.status} M={rep.m_robots} {rep.certificate}".rstrip()
    return (f"status={rep.status} M={rep.m_robots} Cmax={rep.j_ms:.6f} J={rep.objective:.6f} "
            f"used={rep.schedule.n_used} gap={rep.gap:.6g} nodes={rep.nodes} wall={rep.wall_time:.2f}s")


def cmd_plan(args) -> int:
    inst = _read_mission(args.mission, _overrides(args))
    m = _single_robots(args, inst)
    limits = SolveLimits(time_limit=args.time_limit, threads=max(1, args.threads))
    rep = solve(inst, m, args.variant, limits)
    print(_status_line(rep))
    if rep.schedule is None:
        return EXIT_INFEASIBLE if rep.status == "infeasible" else EXIT_TIMEOUT
    used_inst = inst.with_fleet(m) if m != inst.n_robots else inst
    if args.output:
        _write(args.output, json.dumps(schedule_to_dict(used_inst, rep, args.time_limit), indent=1) + "\n")
    return EXIT_OK if rep.status == "optimal" else EXIT_TIMEOUT


def _read_schedule(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None


def cmd_validate(args) -> int:
    doc = _read_schedule(args.schedule)
    # re-apply the parameters the plan was made with, then any explicit flags
    used = {k: v for k, v in doc.get("params_used", {}).items()
            if k in ("g_ms", "g_im", "g_ut", "fifo_buffer")}
    inst = _read_mission(args.mission, {**used, **_overrides(args)})
    sched = schedule_from_dict(inst, doc)
    if sched.m_robots != inst.n_robots:
        inst = inst.with_fleet(sched.m_robots)
    violations = check_schedule(inst, sched)
    sim = simulate(inst, sched, args.dt)
    report = {
        "valid": not violations,
        "violations": [v.to_dict() for v in violations],
        "clearance_bound_m": inst.params.r_c - 2 * inst.params.v_ex * args.dt,
        "simulation": sim.to_dict(),
    }
    _write(args.output, json.dumps(report) + "\n")
    if args.svg or args.csv:
        svg, table = emit_gantt(inst, sched)
        if args.svg:
            Path(args.svg).write_text(svg)
        if args.csv:
            Path(args.csv).write_text(table)
    for v in violations:
        print(f"violation {v.kind} {list(v.ids)} magnitude={v.magnitude:.6g}: {v.detail}", file=sys.stderr)
    return EXIT_OK if not violations else EXIT_INVALID


def cmd_sweep(args) -> int:
    inst = _read_mission(args.mission, _overrides(args))
    lo, hi = args.robots
    limits = SolveLimits(time_limit=args.time_limit, threads=max(1, args.threads))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for m, rep in sweep_fleet(inst, lo, hi, args.variant, limits):
        if rep.schedule is None:
            w.writerow([m, rep.status, "", "", "", f"{rep.wall_time:.3f}"])
        else:
            w.writerow([m, rep.status, repr(rep.j_ms), repr(rep.objective), rep.schedule.n_used,
                        f"{rep.wall_time:.3f}"])
        log.info("M=%d %s gap=%.6g", m, rep.status, rep.gap)
        if args.output:
            print(_status_line(rep))
    _write(args.output, buf.getvalue())
    return EXIT_OK


def cmd_export_lp(args) -> int:
    inst = _read_mission(args.mission, _overrides(args))
    m = _single_robots(args, inst)
    _write(args.output, export_lp(build_model(inst, m, args.variant)))
    return EXIT_OK


def run_config(args) -> RunConfig:
    inputs = tuple(getattr(args, a) for a in ("mission", "schedule") if getattr(args, a, None))
    return RunConfig(args.command, inputs, getattr(args, "output", None), getattr(args, "variant", "p1"),
                     getattr(args, "robots", None), _overrides(args), getattr(args, "time_limit", 300.0),
                     getattr(args, "dt", 0.1), getattr(args, "threads", 1))


COMMANDS = {"gen": cmd_gen, "plan": cmd_plan, "validate": cmd_validate, "sweep": cmd_sweep,
            "export-lp": cmd_export_lp}


def main(argv=None) -> int:
    level = os.environ.get("AEROPRINT_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    log.debug("config %s", run_config(args))
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"aeroprint {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
