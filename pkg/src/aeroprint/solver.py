"""Exact branch-and-bound for the scheduling MILP.

Once every binary is fixed, the remaining constraints (precedence, robot
ordering, conflict resolution, makespan) are difference constraints on the
start times, and the earliest-start solution minimises every variant's
objective.  The search therefore only branches on combinatorial choices and
evaluates each node with a longest-path computation:

* a conflicting task pair ``(a, b)`` may use any relative offset
  ``D = S_b - S_a`` outside a union of open intervals.  When the current
  offset falls inside a merged interval ``(lo, hi)`` the node splits into
  ``D <= lo`` and ``D >= hi``;
* tasks are assigned to robots (identical robots are opened in id order);
* two tasks on one robot whose occupancy windows overlap are ordered.

Lower bounds combine the earliest-start makespan with preemptive
one-machine bounds over cliques of tasks that can never print at the same
time and over each robot's assigned tasks.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

import networkx as nx
import numpy as np

from .instance import MissionInstance, validate_instance
from .model import Variant, segment_offsets

log = logging.getLogger(__name__)

_TOL = 1e-9


# -- difference constraints ---------------------------------------------------

@dataclass
class DiffConstraintSystem:
    """Start-time variables ``0..n-1`` and arcs ``(u, v, w)`` meaning ``S_v >= S_u + w``.

    Every start is also bounded below by the zero origin.
    """

    n: int
    arcs: list[tuple[int, int, float]] = field(default_factory=list)

    def add(self, u: int, v: int, w: float):
        self.arcs.append((u, v, float(w)))


def earliest_starts(sys: DiffConstraintSystem) -> list[float] | None:
    """Componentwise-minimal non-negative starts satisfying all arcs, or ``None`` on a positive cycle."""
    S = [0.0] * sys.n
    for _ in range(sys.n + 1):
        changed = False
        for u, v, w in sys.arcs:
            if S[u] + w > S[v] + _TOL:
                S[v] = S[u] + w
                changed = True
        if not changed:
            return S
    return None


# -- results ------------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Assignment and start times, with derived per-robot totals."""

    robot_of: tuple[int, ...]
    starts: tuple[float, ...]
    m_robots: int
    makespan: float
    sequences: tuple[tuple[int, ...], ...]
    orientations: tuple[int, ...]
    material: tuple[float, ...]
    flight_time: tuple[float, ...]
    used: tuple[int, ...]

    @classmethod
    def build(cls, instance: MissionInstance, robot_of, starts, m_robots: int) -> "Schedule":
        robot_of = tuple(int(k) for k in robot_of)
        starts = tuple(float(s) for s in starts)
        occ = instance.occupancy
        seqs = [[] for _ in range(m_robots)]
        for i in sorted(range(len(starts)), key=lambda i: (starts[i], i)):
            seqs[robot_of[i]].append(i)
        offs = segment_offsets(instance)
        delta = instance.params.fifo_buffer
        orient = []
        for cp in instance.conflicts.pairs:
            need = offs[cp.task_a][1][cp.seg_a] + delta - offs[cp.task_b][0][cp.seg_b]
            orient.append(int(starts[cp.task_b] - starts[cp.task_a] >= need - 1e-7))
        material = [math.fsum(instance.tasks[i].volume for i in s) for s in seqs]
        flight = [math.fsum(float(occ[i]) for i in s) for s in seqs]
        return cls(
            robot_of=robot_of,
            starts=starts,
            m_robots=m_robots,
            makespan=float(max(s + o for s, o in zip(starts, occ))),
            sequences=tuple(tuple(s) for s in seqs),
            orientations=tuple(orient),
            material=tuple(material),
            flight_time=tuple(flight),
            used=tuple(int(bool(s)) for s in seqs),
        )

    @property
    def n_used(self) -> int:
        return sum(self.used)


def objective_terms(instance: MissionInstance, schedule: Schedule, variant) -> tuple[float, float, float, float]:
    """``(J, J_ms, J_im, J_ut)`` of ``schedule`` under ``variant``; unused terms are 0."""
    variant = Variant.parse(variant)
    p = instance.params
    j_ms = schedule.makespan
    j_im = j_ut = 0.0
    if variant in (Variant.P2, Variant.P3):
        j_im = float(np.dot(instance.alpha, np.asarray(schedule.starts) + instance.occupancy))
    if variant is Variant.P3:
        j_ut = float(schedule.n_used)
    return p.g_ms * j_ms + p.g_im * j_im + p.g_ut * j_ut, j_ms, j_im, j_ut


@dataclass
class SolveLimits:
    time_limit: float = 300.0
    node_limit: int | None = None
    gap_tol: float = 1e-6
    threads: int = 1


@dataclass
class SolveReport:
    status: str  # "optimal" | "feasible-timeout" | "infeasible" | "timeout"
    objective: float | None
    j_ms: float | None
    j_im: float | None
    j_ut: float | None
    bound: float
    nodes: int
    wall_time: float
    schedule: Schedule | None
    variant: Variant
    m_robots: int
    certificate: str = ""

    @property
    def gap(self) -> float:
        if self.objective is None:
            return math.inf
        return max(0.0, self.objective - self.bound)

    @property
    def rel_gap(self) -> float:
        if self.objective is None:
            return math.inf
        return self.gap / max(abs(self.objective), 1e-12)

    @property
    def feasible(self) -> bool:
        return self.schedule is not None


# -- compiled problem -----------------------------------------------------------

def _merge_open(intervals):
    """Merge open intervals ``(lo, hi)``; touching endpoints stay separate."""
    out = []
    for lo, hi in sorted(intervals):
        if hi <= lo:
            continue
        if out and lo < out[-1][1]:
            if hi > out[-1][1]:
                out[-1][1] = hi
        else:
            out.append([lo, hi])
    return [(lo, hi) for lo, hi in out]


def _jackson_preemptive(heads, procs, tails) -> float:
    """Optimal preemptive one-machine makespan with heads and tails."""
    jobs = sorted(zip(heads, procs, tails))
    t = 0.0
    best = 0.0
    ready: list = []
    k = 0
    n = len(jobs)
    while k < n or ready:
        if not ready and t < jobs[k][0]:
            t = jobs[k][0]
        while k < n and jobs[k][0] <= t:
            heapq.heappush(ready, [-jobs[k][2], jobs[k][1]])
            k += 1
        nxt = jobs[k][0] if k < n else math.inf
        job = ready[0]
        run = min(job[1], nxt - t)
        t += run
        job[1] -= run
        if job[1] <= 1e-12:
            heapq.heappop(ready)
            best = max(best, t - job[0])
    return best


class _Problem:
    def __init__(self, instance: MissionInstance, variant: Variant):
        self.inst = instance
        self.variant = variant
        p = instance.params
        self.n = n = instance.n_tasks
        self.m = m = instance.n_robots
        self.d = [float(v) for v in instance.durations]
        self.occ = [float(v) for v in instance.occupancy]
        self.tau_s = p.tau_log_s
        self.vol = [t.volume for t in instance.tasks]
        self.cap = [r.capacity for r in instance.robots]
        self.bat = [r.battery_time for r in instance.robots]
        self.g_ms, self.g_im, self.g_ut = p.g_ms, p.g_im, p.g_ut
        self.use_im = variant in (Variant.P2, Variant.P3) and self.g_im > 0
        self.use_ut = variant is Variant.P3
        self.alpha = [float(a) for a in instance.alpha]
        delta = p.fifo_buffer
        self.horizon = sum(self.occ) + n * delta + 1.0

        # robots with identical budgets are interchangeable
        types: dict[tuple[float, float], int] = {}
        self.robot_type = [types.setdefault((self.cap[k], self.bat[k]), len(types)) for k in range(m)]

        self.base_out: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for i, j in instance.graph.edges:
            self.base_out[i].append((j, self.d[i]))

        # forbidden offset intervals per conflicting task pair
        offs = segment_offsets(instance)
        raw: dict[tuple[int, int], list] = {}
        for cp in instance.conflicts.pairs:
            a, b = cp.task_a, cp.task_b
            ent_a, ext_a = offs[a][0][cp.seg_a], offs[a][1][cp.seg_a]
            ent_b, ext_b = offs[b][0][cp.seg_b], offs[b][1][cp.seg_b]
            raw.setdefault((a, b), []).append((ent_a - ext_b - delta, ext_a - ent_b + delta))
        self.pairs: list[tuple[int, int]] = []
        self.comps: list[list[tuple[float, float]]] = []
        self.comp_lo: list[list[float]] = []
        # same-robot separation: sep[a][b] is the minimum S_b - S_a when a runs first
        self.sep = [[self.occ[a]] * n for a in range(n)]
        for (a, b), ivs in sorted(raw.items()):
            merged = _merge_open(ivs)
            self.sep[a][b] = max(self.occ[a], max(hi for _, hi in ivs))
            self.sep[b][a] = max(self.occ[b], max(-lo for lo, _ in ivs))
            if merged:
                self.pairs.append((a, b))
                self.comps.append(merged)
                self.comp_lo.append([lo for lo, _ in merged])

        # pairs that can never print simultaneously
        g = nx.Graph()
        g.add_nodes_from(range(n))
        for (a, b), comps in zip(self.pairs, self.comps):
            if any(lo <= -self.d[b] and hi >= self.d[a] for lo, hi in comps):
                g.add_edge(a, b)
        cliques = [c for c in nx.find_cliques(g) if len(c) >= 2]
        cliques.sort(key=lambda c: (-sum(self.d[i] for i in c), sorted(c)))
        self.cliques = [sorted(c) for c in cliques[:40]]

        # fewest robots that can carry the budgets (P3 bound)
        self.min_robots = 1
        if self.use_ut:
            tv, tb = sum(self.vol), sum(self.occ)
            caps = sorted(self.cap, reverse=True)
            bats = sorted(self.bat, reverse=True)
            u = 1
            while u < m and (sum(caps[:u]) < tv - 1e-9 or sum(bats[:u]) < tb - 1e-9):
                u += 1
            self.min_robots = u

    def fits(self, members, i: int, k: int) -> bool:
        """Whether robot ``k`` can take task ``i`` on top of ``members``; exact, order-independent sums."""
        if math.fsum([*(self.vol[j] for j in members), self.vol[i]]) > self.cap[k]:
            return False
        return math.fsum([*(self.occ[j] for j in members), self.occ[i]]) <= self.bat[k]

    def budget_certificate(self) -> str:
        tv, tb = sum(self.vol), sum(self.occ)
        if tv > sum(self.cap) + 1e-9:
            return f"material budget: tasks need {tv:.6g} L, fleet carries {sum(self.cap):.6g} L"
        if tb > sum(self.bat) + 1e-9:
            return f"flight time: tasks need {tb:.6g} s, fleet batteries give {sum(self.bat):.6g} s"
        for i in range(self.n):
            if not any(self.vol[i] <= self.cap[k] and self.occ[i] <= self.bat[k] for k in range(self.m)):
                return f"task {i} fits no robot budget"
        return ""

    # objective pieces
    def importance_term(self, S) -> float:
        if not self.use_im:
            return 0.0
        return self.g_im * sum(a * (s + o) for a, s, o in zip(self.alpha, S, self.occ))

    def cost(self, S, n_used: int) -> float:
        cmax = max(s + o for s, o in zip(S, self.occ))
        j = self.g_ms * cmax + self.importance_term(S)
        if self.use_ut:
            j += self.g_ut * n_used
        return j


class _Node:
    __slots__ = ("arcs", "S", "robot_of", "load_v", "load_t", "n_used", "lb", "depth")

    def __init__(self, arcs, S, robot_of, load_v, load_t, n_used, depth):
        self.arcs = arcs
        self.S = S
        self.robot_of = robot_of
        self.load_v = load_v
        self.load_t = load_t
        self.n_used = n_used
        self.lb = -math.inf
        self.depth = depth


class _Search:
    def __init__(self, prob: _Problem, limits: SolveLimits, task_order: str = "importance"):
        self.P = prob
        self.limits = limits
        self.task_order = task_order
        self.best_cost = math.inf
        self.best: tuple[list[int], list[float]] | None = None
        self.nodes = 0

    # longest paths
    def _out(self, arcs):
        out = [list(o) for o in self.P.base_out]
        for u, v, w in arcs:
            out[u].append((v, w))
        return out

    def _propagate(self, S, out, seeds) -> list[float] | None:
        P = self.P
        n = P.n
        S = list(S)
        queue = deque(seeds)
        inq = [False] * n
        for u in seeds:
            inq[u] = True
        horizon = P.horizon
        while queue:
            u = queue.popleft()
            inq[u] = False
            su = S[u]
            for v, w in out[u]:
                nv = su + w
                if nv > S[v] + _TOL:
                    if nv > horizon:
                        return None
                    S[v] = nv
                    if not inq[v]:
                        inq[v] = True
                        queue.append(v)
        return S

    def _tails(self, S, out) -> list[float]:
        P = self.P
        q = list(P.occ)
        order = sorted(range(P.n), key=lambda i: -S[i])
        for _ in range(P.n + 1):
            changed = False
            for u in order:
                best = q[u]
                for v, w in out[u]:
                    if w + q[v] > best + _TOL:
                        best = w + q[v]
                if best > q[u]:
                    q[u] = best
                    changed = True
            if not changed:
                break
        return q

    def _bound(self, node: _Node, out) -> float:
        P = self.P
        S = node.S
        cmax = max(s + o for s, o in zip(S, P.occ))
        if self.best_cost < math.inf:
            quick = P.g_ms * cmax + P.importance_term(S)
            if P.use_ut:
                quick += P.g_ut * max(node.n_used, P.min_robots)
            if quick >= self.best_cost - self.limits.gap_tol:
                return quick
        q = self._tails(S, out)
        ts = P.tau_s
        for clique in P.cliques:
            heads = [S[i] + ts for i in clique]
            procs = [P.d[i] for i in clique]
            tails = [q[i] - ts - P.d[i] for i in clique]
            cmax = max(cmax, _jackson_preemptive(heads, procs, tails))
        # work of everything starting after a head value, spread over all robots
        by_head = sorted(range(P.n), key=lambda i: S[i])
        work = 0.0
        min_tail = math.inf
        for i in reversed(by_head):
            work += P.occ[i]
            min_tail = min(min_tail, q[i] - P.occ[i])
            cmax = max(cmax, S[i] + work / P.m + min_tail)
        if node.robot_of is not None:
            groups: dict[int, list[int]] = {}
            for i, k in enumerate(node.robot_of):
                if k >= 0:
                    groups.setdefault(k, []).append(i)
            for tasks in groups.values():
                if len(tasks) >= 2:
                    cmax = max(cmax, _jackson_preemptive(
                        [S[i] for i in tasks], [P.occ[i] for i in tasks],
                        [q[i] - P.occ[i] for i in tasks]))
        lb = P.g_ms * cmax + P.importance_term(S)
        if P.use_ut:
            lb += P.g_ut * max(node.n_used, P.min_robots)
        return lb

    # violations
    def _conflict_violation(self, S):
        P = self.P
        best = None
        best_key = None
        for idx, (a, b) in enumerate(P.pairs):
            D = S[b] - S[a]
            lows = P.comp_lo[idx]
            k = bisect_right(lows, D) - 1
            if k < 0:
                continue
            lo, hi = P.comps[idx][k]
            if lo + _TOL < D < hi - 1e-7:
                key = (min(S[a], S[b]), -min(D - lo, hi - D), a, b)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (a, b, lo, hi)
        return best

    def _robot_violation(self, S, robot_of):
        P = self.P
        best = None
        best_key = None
        by_robot: dict[int, list[int]] = {}
        for i, k in enumerate(robot_of):
            if k >= 0:
                by_robot.setdefault(k, []).append(i)
        for tasks in by_robot.values():
            for a, b in combinations(tasks, 2):
                D = S[b] - S[a]
                if D >= P.sep[a][b] - 1e-7 or -D >= P.sep[b][a] - 1e-7:
                    continue
                key = (min(S[a], S[b]), a, b)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (a, b)
        return best

    def _robot_choices(self, node: _Node, i: int) -> list[int]:
        P = self.P
        used = set(k for k in node.robot_of if k >= 0)
        opened_types = set()
        out = []
        for k in range(P.m):
            if k not in used:
                t = P.robot_type[k]
                if t in opened_types:
                    continue
                opened_types.add(t)
            if not P.fits([j for j in range(P.n) if node.robot_of[j] == k], i, k):
                continue
            out.append(k)
        return out

    def _complete(self, node: _Node, budget: int = 400):
        """Try to assign the remaining tasks at the node's start times without moving anything."""
        P = self.P
        S = node.S
        todo = sorted((i for i in range(P.n) if node.robot_of[i] < 0), key=lambda i: (S[i], i))
        robot_of = list(node.robot_of)
        members: list[list[int]] = [[] for _ in range(P.m)]
        for i, k in enumerate(robot_of):
            if k >= 0:
                members[k].append(i)
        steps = [0]

        def fits(i, k):
            if not P.fits(members[k], i, k):
                return False
            for j in members[k]:
                D = S[i] - S[j]
                if not (D >= P.sep[j][i] - 1e-7 or -D >= P.sep[i][j] - 1e-7):
                    return False
            return True

        def rec(pos):
            if pos == len(todo):
                return True
            steps[0] += 1
            if steps[0] > budget:
                return False
            i = todo[pos]
            opened = set()
            for k in range(P.m):
                if not members[k]:
                    t = P.robot_type[k]
                    if t in opened:
                        continue
                    opened.add(t)
                if not fits(i, k):
                    continue
                members[k].append(i)
                robot_of[i] = k
                if rec(pos + 1):
                    return True
                members[k].pop()
                robot_of[i] = -1
            return False

        if rec(0):
            return robot_of
        return None

    def _offer(self, S, robot_of):
        n_used = len(set(robot_of))
        c = self.P.cost(S, n_used)
        if c < self.best_cost - 1e-12:
            self.best_cost = c
            self.best = (list(robot_of), list(S))
            log.debug("incumbent %.6f at node %d", c, self.nodes)

    def _child(self, parent: _Node, new_arcs, seeds, robot_of=None, assign=None):
        P = self.P
        arcs = parent.arcs + tuple(new_arcs)
        out = self._out(arcs)
        S = self._propagate(parent.S, out, seeds) if seeds else parent.S
        if S is None:
            return None
        robot_of = parent.robot_of if robot_of is None else robot_of
        load_v, load_t, n_used = parent.load_v, parent.load_t, parent.n_used
        if assign is not None:
            i, k = assign
            robot_of = list(robot_of)
            robot_of[i] = k
            load_v = list(load_v)
            load_t = list(load_t)
            if load_v[k] == 0 and load_t[k] == 0:
                n_used += 1
            load_v[k] += P.vol[i]
            load_t[k] += P.occ[i]
        node = _Node(arcs, S, robot_of, load_v, load_t, n_used, parent.depth + 1)
        node.lb = self._bound(node, out)
        return node

    def _branch(self, node: _Node):
        """Children of ``node``, or ``[]`` when the node is solved or exhausted."""
        P = self.P
        S = node.S
        viol = self._conflict_violation(S)
        if viol is not None:
            a, b, lo, hi = viol
            kids = [self._child(node, [(a, b, hi)], [a]),     # b enters after the interval
                    self._child(node, [(b, a, -lo)], [b])]    # b finishes before it
            return [k for k in kids if k is not None]
        pair = self._robot_violation(S, node.robot_of)
        if pair is not None:
            a, b = pair
            kids = [self._child(node, [(a, b, P.sep[a][b])], [a]),
                    self._child(node, [(b, a, P.sep[b][a])], [b])]
            return [k for k in kids if k is not None]
        free = [i for i in range(P.n) if node.robot_of[i] < 0]
        if not free:
            self._offer(S, node.robot_of)
            return []
        done = self._complete(node)
        if done is not None:
            self._offer(S, done)
            if P.cost(S, len(set(done))) <= node.lb + self.limits.gap_tol:
                return []
        if self.task_order == "importance":
            i = min(free, key=lambda i: (-P.alpha[i], i))
        else:
            i = min(free, key=lambda i: (S[i], i))
        return [c for c in (self._child(node, [], [], assign=(i, k)) for k in self._robot_choices(node, i))
                if c is not None]

    def run(self):
        P = self.P
        t0 = time.perf_counter()
        root = _Node((), [0.0] * P.n, [-1] * P.n, [0.0] * P.m, [0.0] * P.m, 0, 0)
        out = self._out(())
        S = self._propagate(root.S, out, list(range(P.n)))
        if S is None:
            return None, t0
        root.S = S
        root.lb = self._bound(root, out)
        stack = [root]
        tol = self.limits.gap_tol
        timed_out = False
        while stack:
            node = stack.pop()
            if node.lb >= self.best_cost - tol:
                continue
            self.nodes += 1
            if self.nodes % 256 == 0:
                if time.perf_counter() - t0 > self.limits.time_limit:
                    stack.append(node)
                    timed_out = True
                    break
            if self.limits.node_limit is not None and self.nodes > self.limits.node_limit:
                stack.append(node)
                timed_out = True
                break
            kids = self._branch(node)
            kids = [k for k in kids if k.lb < self.best_cost - tol]
            kids.sort(key=lambda k: k.lb, reverse=True)
            stack.extend(kids)
        open_lb = min((nd.lb for nd in stack if nd.lb < self.best_cost - tol), default=math.inf)
        return (timed_out, open_lb), t0


def _report_from(instance, prob: _Problem, search: _Search, variant, status, bound, t0, cert=""):
    sched = None
    terms = (None, None, None, None)
    if search.best is not None:
        robot_of, S = search.best
        sched = Schedule.build(instance, robot_of, S, instance.n_robots)
        terms = objective_terms(instance, sched, variant)
    return SolveReport(
        status=status,
        objective=terms[0],
        j_ms=terms[1],
        j_im=terms[2],
        j_ut=terms[3],
        bound=bound,
        nodes=search.nodes,
        wall_time=time.perf_counter() - t0,
        schedule=sched,
        variant=variant,
        m_robots=instance.n_robots,
        certificate=cert,
    )


def solve(instance: MissionInstance, m_robots: int | None = None, variant="p1",
          limits: SolveLimits | None = None, task_order: str = "importance") -> SolveReport:
    """Minimise the variant's objective over all feasible schedules.

    ``m_robots`` defaults to the instance's fleet size; a larger value
    replicates the last robot spec.
    """
    variant = Variant.parse(variant)
    limits = limits or SolveLimits()
    if m_robots is not None and m_robots != instance.n_robots:
        instance = instance.with_fleet(m_robots)
    t_start = time.perf_counter()
    prob = _Problem(instance, variant)
    search = _Search(prob, limits, task_order=task_order)
    cert = prob.budget_certificate()
    if cert:
        return _report_from(instance, prob, search, variant, "infeasible", math.inf, t_start, cert)
    blocking = [f for f in validate_instance(instance) if "cycle" in f]
    if blocking:
        return _report_from(instance, prob, search, variant, "infeasible", math.inf, t_start, blocking[0])
    res, _ = search.run()
    if res is None:
        return _report_from(instance, prob, search, variant, "infeasible", math.inf, t_start,
                            "start-time system has a positive cycle")
    timed_out, open_lb = res
    if search.best is None:
        if timed_out:
            return _report_from(instance, prob, search, variant, "timeout", open_lb, t_start)
        return _report_from(instance, prob, search, variant, "infeasible", math.inf, t_start,
                            "search tree exhausted without a feasible schedule")
    if timed_out:
        bound = min(open_lb, search.best_cost)
        return _report_from(instance, prob, search, variant, "feasible-timeout", bound, t_start)
    return _report_from(instance, prob, search, variant, "optimal", search.best_cost, t_start)


def sweep_fleet(instance: MissionInstance, m_min: int, m_max: int, variant="p1",
                limits: SolveLimits | None = None) -> list[tuple[int, SolveReport]]:
    """Solve once per fleet size ``m_min..m_max``; material-infeasible sizes come back ``infeasible``."""
    if m_min < 1 or m_max < m_min:
        raise ValueError("need 1 <= m_min <= m_max")
    return [(m, solve(instance, m, variant, limits)) for m in range(m_min, m_max + 1)]
