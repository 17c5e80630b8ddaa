"""Independent schedule checking, clearance simulation and Gantt output.

The checks here recompute every constraint directly from the mission
geometry; they deliberately share no code with the model builder or the
solver.
"""

from __future__ import annotations

import colorsys
import csv
import io
import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from .instance import MissionInstance

TOL = 1e-6

KINDS = ("assignment", "start", "precedence", "ordering", "material", "battery", "conflict", "makespan")


@dataclass(frozen=True)
class Violation:
    kind: str
    ids: tuple[int, ...]
    magnitude: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ids": list(self.ids), "magnitude": self.magnitude, "detail": self.detail}


def _durations(instance: MissionInstance) -> list[float]:
    v = instance.params.v_ex
    # running sum along the path, the order in which the robot covers it
    return [float(np.cumsum(np.linalg.norm(np.diff(t.path.waypoints, axis=0), axis=1))[-1]) / v
            for t in instance.tasks]


def _segment_times(instance: MissionInstance, i: int, start: float):
    """Entry and exit instant of every segment of task ``i`` started at ``start``."""
    p = instance.params
    pts = instance.tasks[i].path.waypoints
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    ends = np.cumsum(seg)
    t_exit = start + p.tau_log_s + ends / p.v_ex
    t_entry = start + p.tau_log_s + (ends - seg) / p.v_ex
    return t_entry, t_exit


def check_schedule(instance: MissionInstance, schedule, tol: float = TOL) -> list[Violation]:
    """Every constraint the schedule breaks, with how far it is broken."""
    p = instance.params
    N = instance.n_tasks
    M = schedule.m_robots
    robot_of = list(schedule.robot_of)
    S = list(schedule.starts)
    out: list[Violation] = []
    if len(robot_of) != N or len(S) != N:
        return [Violation("assignment", (), float(abs(len(robot_of) - N) or 1), "task count mismatch")]
    for i, k in enumerate(robot_of):
        if not (0 <= k < M) or k >= len(instance.robots):
            out.append(Violation("assignment", (i,), 1.0, f"task {i} assigned to unknown robot {k}"))
    if out:
        return out

    d = _durations(instance)
    busy = [p.tau_log_s + di + p.tau_log_e for di in d]
    for i, s in enumerate(S):
        if s < -tol:
            out.append(Violation("start", (i,), -s, f"task {i} starts before t=0"))
    for i, j in instance.graph.edges:
        gap = S[i] + d[i] - S[j]
        if gap > tol:
            out.append(Violation("precedence", (i, j), gap, f"task {j} starts {gap:.6g} s before {i} prints out"))

    for k in range(M):
        mine = sorted((i for i in range(N) if robot_of[i] == k), key=lambda i: S[i])
        for x in range(len(mine)):
            for y in range(x + 1, len(mine)):
                i, j = mine[x], mine[y]
                overlap = min(S[i] + busy[i], S[j] + busy[j]) - max(S[i], S[j])
                if overlap > tol:
                    out.append(Violation("ordering", (k, i, j), overlap,
                                         f"robot {k} busy with {i} and {j} for {overlap:.6g} s"))
        if k < len(instance.robots):
            mat = math.fsum(instance.tasks[i].volume for i in mine)
            if mat > instance.robots[k].capacity + tol:
                out.append(Violation("material", (k,), mat - instance.robots[k].capacity,
                                     f"robot {k} carries {mat:.6g} L"))
            fly = math.fsum(busy[i] for i in mine)
            if fly > instance.robots[k].battery_time + tol:
                out.append(Violation("battery", (k,), fly - instance.robots[k].battery_time,
                                     f"robot {k} flies {fly:.6g} s"))

    times = {}
    delta = p.fifo_buffer
    for cp in instance.conflicts.pairs:
        for t in (cp.task_a, cp.task_b):
            if t not in times:
                times[t] = _segment_times(instance, t, S[t])
        ea, xa = times[cp.task_a][0][cp.seg_a], times[cp.task_a][1][cp.seg_a]
        eb, xb = times[cp.task_b][0][cp.seg_b], times[cp.task_b][1][cp.seg_b]
        short = min(xa + delta - eb, xb + delta - ea)
        if short > tol:
            out.append(Violation("conflict", (cp.task_a, cp.seg_a, cp.task_b, cp.seg_b), float(short),
                                 f"segments {cp.task_a}:{cp.seg_a} and {cp.task_b}:{cp.seg_b} co-occupied"))

    finish = max(s + b for s, b in zip(S, busy))
    stated = getattr(schedule, "makespan", finish)
    if finish - stated > tol:
        out.append(Violation("makespan", (), finish - stated, f"last task completes at {finish:.6g} s"))
    return out


@dataclass
class SimReport:
    dt: float
    min_distance: float | None
    min_distance_at: float | None
    min_distance_robots: tuple[int, int] | None
    series: list[tuple[float, float | None, tuple[int, int] | None]]
    material_used: list[float]
    flight_time: list[float]
    makespan: float
    concurrent_max: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "global_min_distance_m": self.min_distance if self.min_distance is not None else "none",
            "global_min_distance_time_s": self.min_distance_at,
            "global_min_distance_robots": list(self.min_distance_robots) if self.min_distance_robots else None,
            "min_distance_series": [[t, v if v is not None else "none", list(r) if r else None]
                                    for t, v, r in self.series],
            "material_used_l": self.material_used,
            "flight_time_s": self.flight_time,
            "makespan_s": self.makespan,
            "max_concurrent_printers": self.concurrent_max,
        }


def simulate(instance: MissionInstance, schedule, dt: float = 0.1) -> SimReport:
    """Fly the schedule at constant extrusion speed and track robot clearance.

    Robots count only while printing; logistics legs are not modelled.
    Clearance is sampled every ``dt`` and at every segment boundary.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    p = instance.params
    N = instance.n_tasks
    S = np.asarray(schedule.starts, dtype=float)
    robot_of = list(schedule.robot_of)
    d = np.asarray(_durations(instance))
    busy = p.tau_log_s + d + p.tau_log_e
    makespan = float(np.max(S + busy))
    n_samples = math.ceil(makespan / dt - 1e-12) + 1
    grid = np.arange(n_samples) * dt
    p_start = S + p.tau_log_s
    p_end = p_start + d

    best = np.full(n_samples, np.inf)
    best_pair = np.full((n_samples, 2), -1)
    g_min, g_at, g_pair = math.inf, None, None
    events = [(p_start[i] + np.concatenate([[0.0], instance.tasks[i].path.cumulative_lengths]) / p.v_ex)
              for i in range(N)]
    for i in range(N):
        for j in range(i + 1, N):
            if robot_of[i] == robot_of[j]:
                continue
            lo, hi = max(p_start[i], p_start[j]), min(p_end[i], p_end[j])
            if lo > hi:
                continue
            k0 = max(0, math.ceil(lo / dt - 1e-12))
            k1 = min(n_samples - 1, math.floor(hi / dt + 1e-12))
            idx = np.arange(k0, k1 + 1)
            ev = np.concatenate([events[i], events[j], [lo, hi]])
            ev = ev[(ev >= lo) & (ev <= hi)]
            t = np.concatenate([grid[idx], ev])
            pi = instance.tasks[i].path.point_at((t - p_start[i]) * p.v_ex)
            pj = instance.tasks[j].path.point_at((t - p_start[j]) * p.v_ex)
            dist = np.linalg.norm(pi - pj, axis=1)
            pair = (robot_of[i], robot_of[j])
            if len(idx):
                dg = dist[: len(idx)]
                better = dg < best[idx]
                best[idx[better]] = dg[better]
                best_pair[idx[better]] = pair
            k = int(np.argmin(dist))
            if dist[k] < g_min:
                g_min, g_at, g_pair = float(dist[k]), float(t[k]), pair

    series = [(float(grid[k]), float(best[k]) if np.isfinite(best[k]) else None,
               tuple(int(v) for v in best_pair[k]) if np.isfinite(best[k]) else None)
              for k in range(n_samples)]
    M = schedule.m_robots
    material = [math.fsum(instance.tasks[i].volume for i in range(N) if robot_of[i] == k) for k in range(M)]
    flight = [math.fsum(float(busy[i]) for i in range(N) if robot_of[i] == k) for k in range(M)]
    active = np.zeros(n_samples, dtype=int)
    for i in range(N):
        active += (grid >= p_start[i]) & (grid <= p_end[i])
    return SimReport(
        dt=float(dt),
        min_distance=g_min if math.isfinite(g_min) else None,
        min_distance_at=g_at,
        min_distance_robots=g_pair,
        series=series,
        material_used=material,
        flight_time=flight,
        makespan=makespan,
        concurrent_max=int(active.max()) if n_samples else 0,
    )


def _color(i: int, n: int) -> str:
    r, g, b = colorsys.hsv_to_rgb((i * 0.61803398875) % 1.0, 0.55, 0.9)
    return "#{:02x}{:02x}{:02x}".format(int(r * 255), int(g * 255), int(b * 255))


def emit_gantt(instance: MissionInstance, schedule, px_per_s: float | None = None) -> tuple[str, str]:
    """Gantt chart of ``schedule`` as ``(svg_text, csv_text)``.

    One row per robot; each task is drawn as a grey start-logistics block,
    a coloured printing block labelled with the task id and a grey
    end-logistics block.
    """
    p = instance.params
    N = instance.n_tasks
    if N == 0:
        raise ValueError("empty schedule")
    d = _durations(instance)
    S = list(schedule.starts)
    rows = []
    for i in range(N):
        ps = S[i] + p.tau_log_s
        pe = ps + d[i]
        rows.append((i, schedule.robot_of[i], S[i], ps, pe, S[i] + p.tau_log_s + d[i] + p.tau_log_e))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "robot", "start_s", "print_start_s", "print_end_s", "complete_s"])
    for r in rows:
        w.writerow([r[0], r[1], *(repr(float(v)) for v in r[2:])])

    horizon = max(r[5] for r in rows)
    left, top, row_h, bar_h = 60, 30, 34, 24
    scale = px_per_s or max(0.2, 900.0 / max(horizon, 1e-9))
    width = left + horizon * scale + 20
    height = top + row_h * schedule.m_robots + 30
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.1f}" height="{height:.1f}" '
        f'font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="18">makespan {horizon:.2f} s</text>',
    ]
    for k in range(schedule.m_robots):
        y = top + k * row_h
        parts.append(f'<text x="6" y="{y + bar_h * 0.7:.1f}">R{k}</text>')
        parts.append(f'<line x1="{left}" y1="{y + row_h - 2:.1f}" x2="{width - 10:.1f}" '
                     f'y2="{y + row_h - 2:.1f}" stroke="#dddddd"/>')
    for i, k, s, ps, pe, done in rows:
        y = top + k * row_h
        for x0, x1, fill, label in ((s, ps, "#9e9e9e", None), (ps, pe, _color(i, N), str(i)),
                                    (pe, done, "#9e9e9e", None)):
            parts.append(f'<rect x="{left + x0 * scale:.2f}" y="{y}" width="{max(0.0, (x1 - x0) * scale):.2f}" '
                         f'height="{bar_h}" fill="{fill}" stroke="#333333" stroke-width="0.5"/>')
            if label is not None:
                parts.append(f'<text x="{left + (x0 + x1) / 2 * scale:.2f}" y="{y + bar_h * 0.68:.1f}" '
                             f'text-anchor="middle">{escape(label)}</text>')
    ax_y = top + row_h * schedule.m_robots + 14
    step = 10 ** math.floor(math.log10(max(horizon, 1.0)))
    if horizon / step < 4:
        step /= 2
    t = 0.0
    while t <= horizon + 1e-9:
        parts.append(f'<text x="{left + t * scale:.1f}" y="{ax_y}" text-anchor="middle">{t:g}</text>')
        t += step
    parts.append("</svg>")
    return "\n".join(parts) + "\n", buf.getvalue()
