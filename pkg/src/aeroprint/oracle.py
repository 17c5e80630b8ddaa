"""Brute-force optimal scheduler for tiny instances.

Enumerates every task-to-robot assignment, every task order on each robot
and every orientation of the conflict pairs that straddle two robots, then
takes the earliest-start schedule of each combination.  Nothing here is
shared with the branch-and-bound solver except the result types.
"""

from __future__ import annotations

import math
import time
from itertools import permutations, product

import numpy as np

from .instance import MissionInstance
from .model import Variant
from .solver import Schedule, SolveReport, objective_terms

MAX_TASKS = 7


class OracleRefused(ValueError):
    """Instance too large for exhaustive enumeration."""


def _entry_exit(instance: MissionInstance):
    p = instance.params
    out = []
    for t in instance.tasks:
        seg = np.sqrt(((t.path.waypoints[1:] - t.path.waypoints[:-1]) ** 2).sum(axis=1))
        before = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
        out.append((p.tau_log_s + before / p.v_ex, p.tau_log_s + (before + seg) / p.v_ex))
    return out


def brute_force_schedule(instance: MissionInstance, m_robots: int | None = None, variant="p1",
                         max_tasks: int = MAX_TASKS) -> SolveReport:
    variant = Variant.parse(variant)
    t0 = time.perf_counter()
    if m_robots is not None and m_robots != instance.n_robots:
        instance = instance.with_fleet(m_robots)
    N, M = instance.n_tasks, instance.n_robots
    if N > max_tasks:
        raise OracleRefused(f"{N} tasks is beyond the oracle limit of {max_tasks}")
    p = instance.params
    dur = np.array([t.path.length / p.v_ex for t in instance.tasks])
    busy = p.tau_log_s + dur + p.tau_log_e
    vol = np.array([t.volume for t in instance.tasks])
    alpha = np.asarray(instance.alpha, dtype=float)
    use_im = variant in (Variant.P2, Variant.P3)
    use_ut = variant is Variant.P3
    delta = p.fifo_buffer

    times = _entry_exit(instance)
    # each conflict pair as two alternative arcs: (a -> b, w_first) when a enters
    # first and (b -> a, w_second) otherwise
    conflicts = []
    for cp in instance.conflicts.pairs:
        ea, xa = times[cp.task_a][0][cp.seg_a], times[cp.task_a][1][cp.seg_a]
        eb, xb = times[cp.task_b][0][cp.seg_b], times[cp.task_b][1][cp.seg_b]
        w_first = max(ea - eb, xa + delta - eb)
        w_second = max(eb - ea, xb + delta - ea)
        conflicts.append((cp.task_a, cp.task_b, w_first, w_second))

    base = np.full((N, N), -np.inf)
    for i, j in instance.graph.edges:
        base[i, j] = max(base[i, j], dur[i])

    best_j = math.inf
    best_key = None
    best = None
    evaluated = 0
    for assign in product(range(M), repeat=N):
        groups = [[i for i in range(N) if assign[i] == k] for k in range(M)]
        # budgets are compared exactly, with correctly rounded sums
        if any(math.fsum(vol[i] for i in g) > instance.robots[k].capacity for k, g in enumerate(groups)):
            continue
        if any(math.fsum(busy[i] for i in g) > instance.robots[k].battery_time for k, g in enumerate(groups)):
            continue
        orders = list(product(*(permutations(g) for g in groups)))
        cross = [c for c in conflicts if assign[c[0]] != assign[c[1]]]
        if cross:
            flips = np.array(list(product((True, False), repeat=len(cross))), dtype=bool)
        else:
            flips = np.ones((1, 0), dtype=bool)
        n_ord, n_flip = len(orders), len(flips)
        B = n_ord * n_flip

        W = np.broadcast_to(base, (n_ord, N, N)).copy()
        for o, order in enumerate(orders):
            rank = {}
            for seq in order:
                for r, i in enumerate(seq):
                    rank[i] = r
                for x in range(len(seq)):
                    for y in range(x + 1, len(seq)):
                        i, j = seq[x], seq[y]
                        W[o, i, j] = max(W[o, i, j], busy[i])
            for a, b, w1, w2 in conflicts:
                if assign[a] == assign[b]:
                    if rank[a] < rank[b]:
                        W[o, a, b] = max(W[o, a, b], w1)
                    else:
                        W[o, b, a] = max(W[o, b, a], w2)
        W = np.repeat(W, n_flip, axis=0)
        fl = np.tile(flips, (n_ord, 1))
        for c, (a, b, w1, w2) in enumerate(cross):
            W[:, a, b] = np.where(fl[:, c], np.maximum(W[:, a, b], w1), W[:, a, b])
            W[:, b, a] = np.where(~fl[:, c], np.maximum(W[:, b, a], w2), W[:, b, a])

        S = np.zeros((B, N))
        for _ in range(N):
            S = np.maximum(S, np.max(S[:, :, None] + W, axis=1))
        again = np.maximum(S, np.max(S[:, :, None] + W, axis=1))
        ok = np.all(again <= S + 1e-9, axis=1)
        evaluated += B
        if not ok.any():
            continue
        cmax = np.max(S + busy, axis=1)
        J = p.g_ms * cmax
        if use_im:
            J = J + p.g_im * ((S + busy) @ alpha)
        if use_ut:
            J = J + p.g_ut * sum(1 for g in groups if g)
        J = np.where(ok, J, np.inf)
        r = int(np.argmin(J))
        if J[r] < best_j - 1e-9 or (abs(J[r] - best_j) <= 1e-9 and (assign, tuple(np.round(S[r], 9))) < best_key):
            best_j = float(J[r])
            best_key = (assign, tuple(np.round(S[r], 9)))
            best = (assign, S[r].copy())

    wall = time.perf_counter() - t0
    if best is None:
        return SolveReport("infeasible", None, None, None, None, math.inf, evaluated, wall, None,
                           variant, M, certificate="every combination violates a constraint")
    sched = Schedule.build(instance, best[0], best[1], M)
    J, j_ms, j_im, j_ut = objective_terms(instance, sched, variant)
    return SolveReport("optimal", J, j_ms, j_im, j_ut, J, evaluated, wall, sched, variant, M)
