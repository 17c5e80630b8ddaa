"""Segment and polyline geometry for manufacturing paths.

Everything here is pure and works on plain floats or numpy arrays; nothing
holds mutable state, so the functions are safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

_EPS = 1e-15


class GeometryError(ValueError):
    """Raised for non-finite or otherwise unusable geometry."""


class Segment(NamedTuple):
    a: tuple[float, float, float]
    b: tuple[float, float, float]


def _as_points(waypoints) -> np.ndarray:
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"waypoints must be an (n, 3) array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("waypoints contain non-finite coordinates")
    return pts


@dataclass(frozen=True, eq=False)
class PrintPath:
    """Ordered polyline traversed at constant speed while depositing.

    ``cumulative_lengths[i]`` is the arc length from the first waypoint to
    the end of segment ``i``.
    """

    waypoints: np.ndarray
    cumulative_lengths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = _as_points(self.waypoints)
        if len(pts) < 2:
            raise GeometryError("a path needs at least two waypoints")
        pts.setflags(write=False)
        seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.cumsum(seg_len)
        if cum[-1] <= 0.0:
            raise GeometryError("path has zero total length")
        cum.setflags(write=False)
        object.__setattr__(self, "waypoints", pts)
        object.__setattr__(self, "cumulative_lengths", cum)

    @property
    def n_segments(self) -> int:
        return len(self.waypoints) - 1

    @property
    def length(self) -> float:
        return float(self.cumulative_lengths[-1])

    @property
    def starts(self) -> np.ndarray:
        return self.waypoints[:-1]

    @property
    def ends(self) -> np.ndarray:
        return self.waypoints[1:]

    def segment(self, i: int) -> Segment:
        return Segment(tuple(self.waypoints[i]), tuple(self.waypoints[i + 1]))

    def point_at(self, s) -> np.ndarray:
        """Point(s) at arc length ``s``, clamped to the path."""
        cum = np.concatenate([[0.0], self.cumulative_lengths])
        s = np.clip(np.asarray(s, dtype=float), 0.0, cum[-1])
        return np.stack([np.interp(s, cum, self.waypoints[:, d]) for d in range(3)], axis=-1)


class ConflictPair(NamedTuple):
    task_a: int
    task_b: int
    seg_a: int
    seg_b: int
    min_dist: float


@dataclass(frozen=True)
class ConflictSet:
    """Cross-path segment pairs within the clearance radius.

    ``pairs`` is sorted by ``(task_a, task_b, seg_a, seg_b)`` and
    ``probability`` holds the conflict-graph weight of every task pair that
    contributes at least one pair (absent pairs have probability 0).
    """

    r_c: float
    pairs: tuple[ConflictPair, ...]
    probability: dict[tuple[int, int], float]

    def __len__(self):
        return len(self.pairs)

    def p(self, i: int, j: int) -> float:
        if i > j:
            i, j = j, i
        return self.probability.get((i, j), 0.0)

    def task_pairs(self) -> list[tuple[int, int]]:
        return sorted(self.probability)


def segment_distances(p0, p1, q0, q1) -> np.ndarray:
    """Vectorised minimum distance between closed segments ``p0p1`` and ``q0q1``.

    Inputs broadcast over leading axes; the last axis holds xyz.
    Minimises ``|p(s) - q(t)|^2`` over the unit square: interior critical
    point first, then clamping onto the boundary.  Degenerate (point)
    segments reduce to point-segment distance.
    """
    p0, p1, q0, q1 = (np.asarray(v, dtype=float) for v in (p0, p1, q0, q1))
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)

    p_point = a <= _EPS
    q_point = e <= _EPS
    safe_a = np.where(p_point, 1.0, a)
    safe_e = np.where(q_point, 1.0, e)

    denom = a * e - b * b
    parallel = denom <= 1e-12 * a * e
    s = np.where(parallel, 0.0, np.clip((b * f - c * e) / np.where(parallel, 1.0, denom), 0.0, 1.0))
    t = (b * s + f) / safe_e
    lo = t < 0.0
    hi = t > 1.0
    s = np.where(lo, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(hi, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)

    # p degenerate: project p0 onto q
    s = np.where(p_point, 0.0, s)
    t = np.where(p_point & ~q_point, np.clip(f / safe_e, 0.0, 1.0), t)
    # q degenerate: project q0 onto p
    t = np.where(q_point, 0.0, t)
    s = np.where(q_point & ~p_point, np.clip(-c / safe_a, 0.0, 1.0), s)

    diff = (p0 + d1 * s[..., None]) - (q0 + d2 * t[..., None])
    return np.sqrt(np.einsum("...i,...i->...", diff, diff))


def segment_min_distance(a: Segment, b: Segment) -> float:
    """Exact minimum Euclidean distance between two closed 3D segments."""
    pts = np.array([a[0], a[1], b[0], b[1]], dtype=float)
    if pts.shape != (4, 3) or not np.all(np.isfinite(pts)):
        raise GeometryError("segments need four finite 3D endpoints")
    return float(segment_distances(pts[0], pts[1], pts[2], pts[3]))


def _pair_conflicts(pa: PrintPath, pb: PrintPath, r_c: float):
    """Indices and distances of segment pairs of ``pa`` x ``pb`` within ``r_c``."""
    lo_a = np.minimum(pa.starts, pa.ends) - r_c
    hi_a = np.maximum(pa.starts, pa.ends) + r_c
    lo_b = np.minimum(pb.starts, pb.ends)
    hi_b = np.maximum(pb.starts, pb.ends)
    if np.any(lo_a.min(axis=0) > hi_b.max(axis=0)) or np.any(hi_a.max(axis=0) < lo_b.min(axis=0)):
        return np.empty(0, int), np.empty(0, int), np.empty(0)
    overlap = np.all(
        (lo_a[:, None, :] <= hi_b[None, :, :]) & (hi_a[:, None, :] >= lo_b[None, :, :]), axis=2
    )
    ia, ib = np.nonzero(overlap)
    if len(ia) == 0:
        return ia, ib, np.empty(0)
    dist = segment_distances(pa.starts[ia], pa.ends[ia], pb.starts[ib], pb.ends[ib])
    keep = dist <= r_c
    return ia[keep], ib[keep], dist[keep]


def detect_conflicts(paths: Sequence[PrintPath], r_c: float) -> ConflictSet:
    """All cross-path segment pairs whose minimum distance is at most ``r_c``.

    Path ``i`` in ``paths`` belongs to task ``i``.  Segments of the same path
    are never paired with each other.
    """
    if not r_c > 0 or not np.isfinite(r_c):
        raise GeometryError(f"clearance radius must be positive and finite, got {r_c}")
    if len(paths) < 1:
        raise GeometryError("need at least one path")
    pairs: list[ConflictPair] = []
    prob: dict[tuple[int, int], float] = {}
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            ia, ib, dist = _pair_conflicts(paths[i], paths[j], r_c)
            if len(ia) == 0:
                continue
            order = np.lexsort((ib, ia))
            pairs.extend(
                ConflictPair(i, j, int(ia[k]), int(ib[k]), float(dist[k])) for k in order
            )
            prob[(i, j)] = len(ia) / (paths[i].n_segments * paths[j].n_segments)
    return ConflictSet(r_c=float(r_c), pairs=tuple(pairs), probability=prob)


def conflict_probability(p_a: PrintPath, p_b: PrintPath, r_c: float) -> float:
    """Fraction of the segment pairs of two paths that lie within ``r_c``."""
    if not r_c > 0:
        raise GeometryError(f"clearance radius must be positive, got {r_c}")
    ia, _, _ = _pair_conflicts(p_a, p_b, r_c)
    return len(ia) / (p_a.n_segments * p_b.n_segments)


def arrival_offsets(path: PrintPath, v_ex: float) -> np.ndarray:
    """Time from printing start until the end of each segment at speed ``v_ex``."""
    if not v_ex > 0 or not np.isfinite(v_ex):
        raise GeometryError(f"extrusion speed must be positive, got {v_ex}")
    return path.cumulative_lengths / v_ex
