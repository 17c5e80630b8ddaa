"""MILP assembly for the P1/P2/P3 scheduling variants and CPLEX-LP export."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .instance import MissionInstance


class Variant(str, enum.Enum):
    P1 = "p1"  # makespan
    P2 = "p2"  # + importance-weighted completion
    P3 = "p3"  # + robot utilisation cost

    @classmethod
    def parse(cls, v) -> "Variant":
        return v if isinstance(v, cls) else cls(str(v).lower())


class VarKind(str, enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"
    C_ORIENT = "c"
    U = "u"
    START = "S"
    MAKESPAN = "Cmax"


class VarRef(NamedTuple):
    kind: VarKind
    idx: tuple[int, ...] = ()

    @property
    def binary(self) -> bool:
        return self.kind not in (VarKind.START, VarKind.MAKESPAN)

    @property
    def name(self) -> str:
        if self.kind is VarKind.MAKESPAN:
            return "Cmax"
        return "_".join([self.kind.value, *map(str, self.idx)])


@dataclass(frozen=True)
class LinearConstraint:
    terms: tuple[tuple[VarRef, float], ...]
    sense: str  # "<=", "=", ">="
    rhs: float
    tag: str

    def __post_init__(self):
        refs = [v for v, _ in self.terms]
        if len(set(refs)) != len(refs):
            raise ValueError(f"duplicate variable in {self.tag} row")
        if self.sense not in ("<=", "=", ">="):
            raise ValueError(f"bad sense {self.sense!r}")

    def activity(self, values: dict[VarRef, float]) -> float:
        return sum(c * values[v] for v, c in self.terms)

    def satisfied(self, values: dict[VarRef, float], tol: float = 1e-6) -> bool:
        lhs = self.activity(values)
        if self.sense == "<=":
            return lhs <= self.rhs + tol
        if self.sense == ">=":
            return lhs >= self.rhs - tol
        return abs(lhs - self.rhs) <= tol


@dataclass(frozen=True)
class MilpModel:
    variant: Variant
    n_tasks: int
    m_robots: int
    big_m: float
    variables: tuple[VarRef, ...]
    constraints: tuple[LinearConstraint, ...]
    objective: dict[VarRef, float]
    objective_constant: float = 0.0
    index: dict[VarRef, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {v: k for k, v in enumerate(self.variables)})

    def tag_counts(self) -> Counter:
        return Counter(c.tag for c in self.constraints)

    def kind_counts(self) -> Counter:
        return Counter(v.kind for v in self.variables)

    def to_matrices(self):
        """Dense arrays ``(c, A, row_lo, row_hi, integrality, constant)`` for external MIP solvers.

        Variables are bounded below by 0; binaries are marked in
        ``integrality`` and additionally bounded above by 1 by the caller.
        """
        n = len(self.variables)
        c = np.zeros(n)
        for v, coef in self.objective.items():
            c[self.index[v]] = coef
        A = np.zeros((len(self.constraints), n))
        lo = np.full(len(self.constraints), -np.inf)
        hi = np.full(len(self.constraints), np.inf)
        for r, con in enumerate(self.constraints):
            for v, coef in con.terms:
                A[r, self.index[v]] = coef
            if con.sense in ("<=", "="):
                hi[r] = con.rhs
            if con.sense in (">=", "="):
                lo[r] = con.rhs
        integrality = np.array([1 if v.binary else 0 for v in self.variables])
        return c, A, lo, hi, integrality, self.objective_constant


def big_m(instance: MissionInstance) -> float:
    """Horizon bound: total occupancy of a fully sequential plan plus the longest task plus one."""
    return float(instance.occupancy.sum() + instance.durations.max() + 1.0)


def segment_offsets(instance: MissionInstance) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per task, (entry, exit) time of every segment measured from the task start ``S``."""
    out = []
    tau_s, v = instance.params.tau_log_s, instance.params.v_ex
    for t in instance.tasks:
        cum = t.path.cumulative_lengths
        exit_ = tau_s + cum / v
        entry = tau_s + np.concatenate([[0.0], cum[:-1]]) / v
        out.append((entry, exit_))
    return out


def build_model(instance: MissionInstance, m_robots: int | None = None, variant="p1",
                big_m_value: float | None = None) -> MilpModel:
    """Assemble the scheduling MILP for ``m_robots`` robots of ``instance``."""
    variant = Variant.parse(variant)
    N = instance.n_tasks
    if N == 0:
        raise ValueError("cannot build a model without tasks")
    M = instance.n_robots if m_robots is None else int(m_robots)
    if M < 1:
        raise ValueError("m_robots must be >= 1")
    if M != instance.n_robots:
        instance = instance.with_fleet(M)
    p = instance.params
    O = big_m(instance) if big_m_value is None else float(big_m_value)
    d = instance.durations
    occ = instance.occupancy
    delta = p.fifo_buffer

    X = {(i, k): VarRef(VarKind.X, (i, k)) for i in range(N) for k in range(M)}
    Y = {(k, i, j): VarRef(VarKind.Y, (k, i, j))
         for k in range(M) for i in range(N) for j in range(N) if i != j}
    Z = {(k, i, j): VarRef(VarKind.Z, (k, i, j)) for k in range(M) for i, j in combinations(range(N), 2)}
    pairs = instance.conflicts.pairs
    C = [VarRef(VarKind.C_ORIENT, (q,)) for q in range(len(pairs))]
    U = [VarRef(VarKind.U, (k,)) for k in range(M)] if variant is Variant.P3 else []
    S = [VarRef(VarKind.START, (i,)) for i in range(N)]
    cmax = VarRef(VarKind.MAKESPAN)
    variables = (*X.values(), *Y.values(), *Z.values(), *C, *U, *S, cmax)

    rows: list[LinearConstraint] = []

    def add(terms, sense, rhs, tag):
        rows.append(LinearConstraint(tuple(terms), sense, float(rhs), tag))

    for i in range(N):
        add([(S[i], 1.0)], ">=", 0.0, "Eq1")
    for i in range(N):
        add([(X[i, k], 1.0) for k in range(M)], "=", 1.0, "Eq2")
    for i, j in instance.graph.edges:
        add([(S[j], 1.0), (S[i], -1.0)], ">=", d[i], "Eq4")
    # robot busy for the whole occupancy window, logistics included
    for (k, i, j), y in Y.items():
        add([(S[i], 1.0), (S[j], -1.0), (y, O)], "<=", O - occ[i], "Eq6")
    for (k, i, j), z in Z.items():
        add([(z, 1.0), (X[i, k], -1.0)], "<=", 0.0, "Eq7")
        add([(z, 1.0), (X[j, k], -1.0)], "<=", 0.0, "Eq7")
        add([(z, 1.0), (X[i, k], -1.0), (X[j, k], -1.0)], ">=", -1.0, "Eq7")
        add([(Y[k, i, j], 1.0), (Y[k, j, i], 1.0), (z, -1.0)], "=", 0.0, "Eq7")
    for k in range(M):
        add([(X[i, k], instance.tasks[i].volume) for i in range(N)], "<=", instance.robots[k].capacity, "Eq8")
    for k in range(M):
        add([(X[i, k], occ[i]) for i in range(N)], "<=", instance.robots[k].battery_time, "Eq10")

    offsets = segment_offsets(instance)
    for q, cp in enumerate(pairs):
        a, b = cp.task_a, cp.task_b
        ent_a, ext_a = offsets[a][0][cp.seg_a], offsets[a][1][cp.seg_a]
        ent_b, ext_b = offsets[b][0][cp.seg_b], offsets[b][1][cp.seg_b]
        c = C[q]
        # (a) orientation: a enters first when c = 1
        add([(S[a], 1.0), (S[b], -1.0), (c, O)], "<=", O + ent_b - ent_a, "Eq16")
        # (b) b enters first when c = 0
        add([(S[b], 1.0), (S[a], -1.0), (c, -O)], "<=", ent_a - ent_b, "Eq16")
        # (c) first in, first out: a leaves before b enters
        add([(S[a], 1.0), (S[b], -1.0), (c, O)], "<=", O + ent_b - ext_a - delta, "Eq16")
        # (d) b leaves before a enters
        add([(S[b], 1.0), (S[a], -1.0), (c, -O)], "<=", ent_a - ext_b - delta, "Eq16")

    for i in range(N):
        add([(S[i], 1.0), (cmax, -1.0)], "<=", -occ[i], "Eq17")
    if U:
        for k in range(M):
            xs = [(X[i, k], 1.0) for i in range(N)]
            add([*xs, (U[k], -O)], "<=", 0.0, "Eq23")
            add([*xs, (U[k], -1.0)], ">=", 0.0, "Eq23")

    objective: dict[VarRef, float] = {cmax: p.g_ms}
    constant = 0.0
    if variant in (Variant.P2, Variant.P3):
        alpha = instance.alpha
        for i in range(N):
            if alpha[i] != 0:
                objective[S[i]] = p.g_im * alpha[i]
        constant = float(p.g_im * np.dot(alpha, occ))
    if variant is Variant.P3:
        for u in U:
            objective[u] = p.g_ut

    return MilpModel(variant, N, M, O, variables, tuple(rows), objective, constant)


def _fmt(v: float) -> str:
    v = float(v)
    if v == 0:
        v = 0.0  # never print -0
    return format(v, ".17g")


def export_lp(model: MilpModel) -> str:
    """CPLEX LP text of ``model``; deterministic, LF line endings."""
    out = [f"\\ aeroprint scheduling model, variant {model.variant.value.upper()}",
           f"\\ tasks={model.n_tasks} robots={model.m_robots} big_m={_fmt(model.big_m)}",
           "Minimize"]
    obj = [f"{'+' if c >= 0 else '-'} {_fmt(abs(c))} {v.name}" for v, c in model.objective.items()]
    if model.objective_constant:
        obj.append(f"+ {_fmt(model.objective_constant)} ONE_VAR_CONSTANT")
    out.append(" obj: " + " ".join(obj))
    out.append("Subject To")
    seen = Counter()
    for con in model.constraints:
        name = f"{con.tag}_{seen[con.tag]}"
        seen[con.tag] += 1
        lhs = " ".join(f"{'+' if c >= 0 else '-'} {_fmt(abs(c))} {v.name}" for v, c in con.terms)
        out.append(f" {name}: {lhs} {con.sense} {_fmt(con.rhs)}")
    out.append("Bounds")
    for v in model.variables:
        if not v.binary:
            out.append(f" 0 <= {v.name} <= +inf")
    if model.objective_constant:
        out.append(" ONE_VAR_CONSTANT = 1")
    out.append("Binaries")
    names = [v.name for v in model.variables if v.binary]
    for k in range(0, len(names), 8):
        out.append(" " + " ".join(names[k:k + 8]))
    out.append("End")
    return "\n".join(out) + "\n"
