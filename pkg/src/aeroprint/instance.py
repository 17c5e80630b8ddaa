"""Mission data model: tasks, fleet, dependency graph and file I/O."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property
from graphlib import CycleError, TopologicalSorter
from typing import Iterable, Sequence

import numpy as np

from .geometry import ConflictSet, GeometryError, PrintPath, detect_conflicts


class SchemaError(ValueError):
    """A mission document or instance violates the data model."""


@dataclass(frozen=True)
class MissionParams:
    """Global mission parameters (SI units; defaults are the reference values)."""

    tau_log_s: float = 15.0
    tau_log_e: float = 15.0
    v_ex: float = 0.1
    r_c: float = 1.0
    beta: float = 0.5
    g_ms: float = 1.0
    g_im: float = 0.07
    g_ut: float = 100.0
    fifo_buffer: float = 0.0

    def __post_init__(self):
        for name in ("v_ex", "r_c", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise SchemaError(f"params.{name} must be positive, got {v!r}")
        # zero logistics time is allowed so textbook examples can be stated exactly
        for name in ("tau_log_s", "tau_log_e", "g_ms", "g_im", "g_ut", "fifo_buffer"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise SchemaError(f"params.{name} must be non-negative, got {v!r}")

    @property
    def logistics(self) -> float:
        return self.tau_log_s + self.tau_log_e


@dataclass(frozen=True, eq=False)
class Task:
    id: int
    path: PrintPath
    volume: float
    duration: float


@dataclass(frozen=True)
class RobotSpec:
    id: int
    capacity: float
    battery_time: float

    def __post_init__(self):
        if not (math.isfinite(self.capacity) and self.capacity > 0):
            raise SchemaError(f"robot {self.id}: capacity_l must be positive")
        if not (math.isfinite(self.battery_time) and self.battery_time > 0):
            raise SchemaError(f"robot {self.id}: battery_s must be positive")


class DependencyGraph:
    """DAG over task ids; an edge ``(i, j)`` means ``i`` finishes before ``j`` starts."""

    def __init__(self, n_nodes: int, edges: Iterable[tuple[int, int]] = ()):
        self.n_nodes = int(n_nodes)
        seen = []
        for i, j in edges:
            i, j = int(i), int(j)
            for v in (i, j):
                if not 0 <= v < self.n_nodes:
                    raise SchemaError(f"dependencies: unknown task id {v}")
            if i == j:
                raise SchemaError(f"dependencies: dependency cycle at task {i}")
            if (i, j) not in seen:
                seen.append((i, j))
        self.edges: tuple[tuple[int, int], ...] = tuple(seen)
        self.preds: list[list[int]] = [[] for _ in range(self.n_nodes)]
        self.succs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            self.preds[j].append(i)
            self.succs[i].append(j)
        try:
            self.order = tuple(
                TopologicalSorter({v: self.preds[v] for v in range(self.n_nodes)}).static_order()
            )
        except CycleError as exc:
            raise SchemaError(f"dependencies: dependency cycle {exc.args[1]}") from None

    def __len__(self):
        return len(self.edges)

    def __repr__(self):
        return f"DependencyGraph(n_nodes={self.n_nodes}, edges={list(self.edges)})"


def in_degree(g: DependencyGraph, node: int) -> int:
    if not 0 <= node < g.n_nodes:
        raise KeyError(f"unknown node {node}")
    return len(g.preds[node])


def importance(g: DependencyGraph, beta: float) -> dict[int, float]:
    """Second-order in-degree of every node.

    ``alpha_i = indeg(i) + beta * sum(indeg(u) for u in direct predecessors of i)``.
    """
    deg = [len(p) for p in g.preds]
    return {v: deg[v] + beta * sum(deg[u] for u in g.preds[v]) for v in range(g.n_nodes)}


@dataclass(frozen=True, eq=False)
class MissionInstance:
    tasks: tuple[Task, ...]
    graph: DependencyGraph
    robots: tuple[RobotSpec, ...]
    params: MissionParams = field(default_factory=MissionParams)

    def __post_init__(self):
        if [t.id for t in self.tasks] != list(range(len(self.tasks))):
            raise SchemaError("tasks: ids must be dense 0..N-1 in order")
        if [r.id for r in self.robots] != list(range(len(self.robots))):
            raise SchemaError("robots: ids must be dense 0..M-1 in order")
        if self.graph.n_nodes != len(self.tasks):
            raise SchemaError("dependencies: node set differs from task set")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    @cached_property
    def durations(self) -> np.ndarray:
        return np.array([t.duration for t in self.tasks])

    @cached_property
    def occupancy(self) -> np.ndarray:
        """Time each task blocks its robot, logistics included."""
        return self.params.tau_log_s + self.durations + self.params.tau_log_e

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.array([t.volume for t in self.tasks])

    @cached_property
    def alpha(self) -> np.ndarray:
        imp = importance(self.graph, self.params.beta)
        return np.array([imp[i] for i in range(self.n_tasks)])

    @cached_property
    def conflicts(self) -> ConflictSet:
        return detect_conflicts([t.path for t in self.tasks], self.params.r_c)

    def with_params(self, **changes) -> "MissionInstance":
        params = replace(self.params, **changes)
        tasks = self.tasks
        if params.v_ex != self.params.v_ex:
            tasks = tuple(replace(t, duration=t.path.length / params.v_ex) for t in tasks)
        return MissionInstance(tasks, self.graph, self.robots, params)

    def with_robots(self, robots: Sequence[RobotSpec]) -> "MissionInstance":
        return MissionInstance(self.tasks, self.graph, tuple(robots), self.params)

    def with_fleet(self, m: int) -> "MissionInstance":
        """First ``m`` robots; robots beyond the stored fleet repeat the last spec."""
        if m < 1:
            raise SchemaError("fleet size must be at least 1")
        if not self.robots:
            raise SchemaError("instance has no robot specification to replicate")
        specs = [self.robots[min(k, self.n_robots - 1)] for k in range(m)]
        return self.with_robots([replace(r, id=k) for k, r in enumerate(specs)])


def make_instance(
    paths: Sequence, volumes: Sequence[float], edges, robots, params: MissionParams | None = None
) -> MissionInstance:
    """Build an instance from raw waypoints/paths, deriving task durations."""
    params = params or MissionParams()
    tasks = []
    for i, (p, v) in enumerate(zip(paths, volumes, strict=True)):
        path = p if isinstance(p, PrintPath) else PrintPath(np.asarray(p, dtype=float))
        if not (math.isfinite(v) and v > 0):
            raise SchemaError(f"tasks[{i}].volume_l must be positive")
        tasks.append(Task(i, path, float(v), path.length / params.v_ex))
    robot_specs = tuple(
        r if isinstance(r, RobotSpec) else RobotSpec(k, float(r[0]), float(r[1]))
        for k, r in enumerate(robots)
    )
    return MissionInstance(tuple(tasks), DependencyGraph(len(tasks), edges), robot_specs, params)


# -- file I/O ---------------------------------------------------------------

_TOP_KEYS = {"params", "robots", "tasks", "dependencies"}
_ROBOT_KEYS = {"id", "capacity_l", "battery_s"}
_TASK_KEYS = {"id", "volume_l", "waypoints"}
_PARAM_KEYS = {f.name for f in fields(MissionParams)}


def _check_keys(obj, allowed: set[str], where: str, required: set[str] | None = None):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = (allowed if required is None else required) - set(obj)
    if missing:
        raise SchemaError(f"{where}: missing field(s) {sorted(missing)}")


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {v!r}")
    return float(v)


def instance_from_dict(doc: dict) -> MissionInstance:
    _check_keys(doc, _TOP_KEYS, "mission", required={"robots", "tasks"})
    raw_params = doc.get("params", {})
    _check_keys(raw_params, _PARAM_KEYS, "params", required=set())
    params = MissionParams(**{k: _number(v, f"params.{k}") for k, v in raw_params.items()})

    robots = []
    for k, r in enumerate(doc["robots"]):
        _check_keys(r, _ROBOT_KEYS, f"robots[{k}]")
        robots.append((int(r["id"]), _number(r["capacity_l"], f"robots[{k}].capacity_l"),
                       _number(r["battery_s"], f"robots[{k}].battery_s")))
    ids = [r[0] for r in robots]
    if len(set(ids)) != len(ids):
        raise SchemaError("robots.id: duplicate ids")
    if sorted(ids) != list(range(len(ids))):
        raise SchemaError("robots.id: ids must be dense 0..M-1")
    robots.sort()
    robot_specs = [RobotSpec(i, c, b) for i, c, b in robots]

    tasks = []
    for k, t in enumerate(doc["tasks"]):
        _check_keys(t, _TASK_KEYS, f"tasks[{k}]")
        tasks.append((int(t["id"]), _number(t["volume_l"], f"tasks[{k}].volume_l"), t["waypoints"]))
    ids = [t[0] for t in tasks]
    if len(set(ids)) != len(ids):
        raise SchemaError("tasks.id: duplicate ids")
    if sorted(ids) != list(range(len(ids))):
        raise SchemaError("tasks.id: ids must be dense 0..N-1")
    if not tasks:
        raise SchemaError("tasks: at least one task required")
    tasks.sort(key=lambda t: t[0])

    edges = doc.get("dependencies", [])
    for e in edges:
        if not (isinstance(e, list) and len(e) == 2):
            raise SchemaError(f"dependencies: malformed edge {e!r}")
    try:
        return make_instance([t[2] for t in tasks], [t[1] for t in tasks], edges, robot_specs, params)
    except GeometryError as exc:
        raise SchemaError(f"tasks.waypoints: {exc}") from None


def instance_to_dict(inst: MissionInstance) -> dict:
    return {
        "params": asdict(inst.params),
        "robots": [{"id": r.id, "capacity_l": r.capacity, "battery_s": r.battery_time}
                   for r in inst.robots],
        "tasks": [{"id": t.id, "volume_l": t.volume, "waypoints": t.path.waypoints.tolist()}
                  for t in inst.tasks],
        "dependencies": [list(e) for e in inst.graph.edges],
    }


def load_instance(text: str) -> MissionInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"mission file is not valid JSON: {exc}") from None
    return instance_from_dict(doc)


def save_instance(inst: MissionInstance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1) + "\n"


# -- synthetic chunker --------------------------------------------------------

def _lawnmower(x0, x1, y0, y1, z0, z1, layer_height, raster_spacing) -> np.ndarray:
    n_layers = max(1, round((z1 - z0) / layer_height))
    n_lines = max(2, round((y1 - y0) / raster_spacing))
    dy = (y1 - y0) / n_lines
    ys = y0 + dy * (np.arange(n_lines) + 0.5)
    inset = min(dy, x1 - x0) / 2
    xa, xb = x0 + inset, x1 - inset
    pts = []
    for layer in range(n_layers):
        z = z0 + (z1 - z0) * (layer + 1) / n_layers
        rows = ys if layer % 2 == 0 else ys[::-1]
        flip = (n_lines * layer) % 2 == 1
        for k, y in enumerate(rows):
            left_to_right = (k % 2 == 0) != flip
            pts.append((xa if left_to_right else xb, y, z))
            pts.append((xb if left_to_right else xa, y, z))
    return np.array(pts)


def generate_rect_instance(
    width: float,
    length: float,
    height: float,
    nx: int,
    ny: int,
    nz: int,
    params: MissionParams | None = None,
    *,
    n_robots: int = 6,
    capacity_l: float | None = None,
    battery_s: float | None = None,
    layer_height: float = 0.0625,
    raster_spacing: float = 1 / 6,
    expansion: float = 10.0,
) -> MissionInstance:
    """Tile a ``width x length x height`` box into ``nx*ny*nz`` chunks.

    Chunk ids run x fastest, then y, then z.  Each chunk gets a
    boustrophedon raster per layer.  A chunk depends on the chunk directly
    below it and on its lower-id face neighbours in the same level.  Chunk
    volume is the geometric volume (litres) divided by ``expansion``.

    Robot budgets default to values that let any single robot do the
    whole mission.
    """
    if min(nx, ny, nz) < 1:
        raise SchemaError("grid counts must be >= 1")
    dims = (width, length, height, layer_height, raster_spacing, expansion)
    if not all(math.isfinite(v) and v > 0 for v in dims):
        raise SchemaError("box dimensions, layer height, raster spacing and expansion must be positive")
    if n_robots < 1:
        raise SchemaError("n_robots must be >= 1")
    params = params or MissionParams()
    cw, cl, ch = width / nx, length / ny, height / nz

    def cid(i, j, k):
        return i + nx * (j + ny * k)

    paths, volumes, edges = [], [], []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                paths.append(_lawnmower(i * cw, (i + 1) * cw, j * cl, (j + 1) * cl,
                                        k * ch, (k + 1) * ch, layer_height, raster_spacing))
                volumes.append(cw * cl * ch * 1000.0 / expansion)
                me = cid(i, j, k)
                if k > 0:
                    edges.append((cid(i, j, k - 1), me))
                if i > 0:
                    edges.append((cid(i - 1, j, k), me))
                if j > 0:
                    edges.append((cid(i, j - 1, k), me))
    edges.sort(key=lambda e: (e[1], e[0]))
    n = len(paths)
    total_vol = float(sum(volumes))
    lengths = [float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) for p in paths]
    total_occ = sum(L / params.v_ex + params.logistics for L in lengths)
    cap = total_vol if capacity_l is None else float(capacity_l)
    bat = total_occ if battery_s is None else float(battery_s)
    robots = [RobotSpec(r, cap, bat) for r in range(n_robots)]
    assert n == nx * ny * nz
    return make_instance(paths, volumes, edges, robots, params)


# -- sanity checks ------------------------------------------------------------

def validate_instance(inst: MissionInstance) -> list[str]:
    """Findings that make the instance obviously unschedulable (empty if none)."""
    findings = []
    try:
        DependencyGraph(inst.n_tasks, inst.graph.edges)
    except SchemaError as exc:
        findings.append(str(exc))
    for t in inst.tasks:
        if not t.volume > 0:
            findings.append(f"task {t.id}: non-positive volume")
        if not t.duration > 0:
            findings.append(f"task {t.id}: non-positive duration")
    if not inst.robots:
        findings.append("fleet is empty")
        return findings
    if inst.volumes.sum() > sum(r.capacity for r in inst.robots) + 1e-9:
        findings.append("material infeasible: total task volume exceeds fleet capacity")
    max_bat = max(r.battery_time for r in inst.robots)
    max_cap = max(r.capacity for r in inst.robots)
    for t, occ in zip(inst.tasks, inst.occupancy):
        if occ > max_bat + 1e-9:
            findings.append(f"task {t.id} unschedulable: battery")
        if t.volume > max_cap + 1e-9:
            findings.append(f"task {t.id} unschedulable: material")
    if inst.occupancy.sum() > sum(r.battery_time for r in inst.robots) + 1e-9:
        findings.append("flight time infeasible: total occupancy exceeds fleet battery")
    return findings
