import csv
import io
import math
import re

import numpy as np
import pytest

from aeroprint import MissionParams, Schedule, make_instance, solve
from aeroprint.validate import KINDS, check_schedule, emit_gantt, simulate

from conftest import crossing_pair, separate_tasks
from corpus import corpus


def build(inst, robots, starts, m=None):
    return Schedule.build(inst, robots, starts, m or inst.n_robots)


def test_solver_output_is_clean():
    for inst in corpus(10):
        rep = solve(inst, None, "p1")
        if rep.schedule is not None:
            assert check_schedule(inst, rep.schedule) == []


def test_overlap_on_one_robot():
    inst = separate_tasks([100.0, 100.0])
    v = check_schedule(inst, build(inst, [0, 0], [0.0, 100.0]))
    assert [x.kind for x in v] == ["ordering"]
    assert v[0].magnitude == pytest.approx(30.0)


def test_equal_starts_on_crossing_paths():
    inst = crossing_pair()
    v = check_schedule(inst, build(inst, [0, 1], [0.0, 0.0]))
    assert v and {x.kind for x in v} == {"conflict"}
    assert all(x.magnitude > 0 for x in v)


def test_precedence_and_negative_start():
    inst = separate_tasks([50.0, 50.0], edges=[(0, 1)], m_robots=2)
    v = check_schedule(inst, build(inst, [0, 1], [0.0, 20.0]))
    assert [(x.kind, x.ids) for x in v] == [("precedence", (0, 1))]
    assert v[0].magnitude == pytest.approx(30.0)
    v = check_schedule(inst, build(inst, [0, 1], [-5.0, 50.0]))
    assert {x.kind for x in v} == {"start"}


def test_budget_violations():
    inst = separate_tasks([100.0, 100.0], volume=2.0, capacity=3.0, battery=200.0, m_robots=2)
    v = check_schedule(inst, build(inst, [0, 0], [0.0, 130.0]))
    kinds = {x.kind: x.magnitude for x in v}
    assert kinds["material"] == pytest.approx(1.0)
    assert kinds["battery"] == pytest.approx(60.0)


def test_unknown_robot():
    inst = separate_tasks([10.0])
    s = Schedule((3,), (0.0,), 1, 40.0, ((),), (), (0.0,), (0.0,), (0,))
    assert [x.kind for x in check_schedule(inst, s)] == ["assignment"]


def test_stated_makespan_too_small():
    inst = separate_tasks([10.0])
    s = build(inst, [0], [0.0])
    fake = Schedule(s.robot_of, s.starts, 1, 30.0, s.sequences, s.orientations, s.material, s.flight_time, s.used)
    assert [x.kind for x in check_schedule(inst, fake)] == ["makespan"]


def test_violation_kinds_closed_set():
    assert set(KINDS) >= {"assignment", "precedence", "ordering", "material", "battery", "conflict", "makespan"}


def test_parallel_paths_two_metres_apart():
    params = MissionParams()
    a = np.array([[0, 0, 0], [10, 0, 0]])
    b = np.array([[0, 2, 0], [10, 2, 0]])
    inst = make_instance([a, b], [1, 1], [], [(5, 1e5)] * 2, params)
    rep = simulate(inst, build(inst, [0, 1], [0.0, 0.0]), 0.1)
    assert rep.min_distance == pytest.approx(2.0)
    assert rep.min_distance_robots == (0, 1)


def test_single_robot_reports_none():
    inst = separate_tasks([10.0, 10.0])
    rep = simulate(inst, build(inst, [0, 0], [0.0, 40.0]), 0.5)
    assert rep.min_distance is None
    d = rep.to_dict()
    assert d["global_min_distance_m"] == "none"
    assert all(v == "none" for _, v, _ in d["min_distance_series"])


def test_series_length_makespan_and_totals():
    inst = corpus(3)[2]
    rep = solve(inst, None, "p1")
    for dt in (0.1, 0.37, 1.0):
        sim = simulate(inst, rep.schedule, dt)
        expect = max(s + o for s, o in zip(rep.schedule.starts, inst.occupancy))
        assert abs(sim.makespan - expect) <= 1e-9
        assert len(sim.series) == math.ceil(sim.makespan / dt) + 1
        for k in range(inst.n_robots):
            mine = [i for i in range(inst.n_tasks) if rep.schedule.robot_of[i] == k]
            assert sim.material_used[k] == math.fsum(inst.tasks[i].volume for i in mine)
            assert sim.flight_time[k] == math.fsum(float(inst.occupancy[i]) for i in mine)


@pytest.mark.parametrize("dt", [0.0, -1.0, float("nan")])
def test_bad_dt(dt):
    inst = separate_tasks([10.0])
    with pytest.raises(ValueError):
        simulate(inst, build(inst, [0], [0.0]), dt)


def test_clearance_theorem_on_corpus():
    for inst in corpus(24):
        rep = solve(inst, None, "p1")
        if rep.schedule is None:
            continue
        dt = 0.1
        sim = simulate(inst, rep.schedule, dt)
        if sim.min_distance is not None:
            assert sim.min_distance >= inst.params.r_c - 2 * inst.params.v_ex * dt


def test_event_sampling_catches_boundary_contact():
    # the robots touch exactly at t = 15 + 10.05 s, which a 1 s grid misses
    params = MissionParams(r_c=0.5)
    a = np.array([[0, 0, 0], [1.005, 0, 0], [2, 0, 0]])
    b = np.array([[1.005, 3, 0], [1.005, 0, 0], [1.005, -3, 0]])
    inst = make_instance([a, b], [1, 1], [], [(5, 1e5)] * 2, params)
    sim = simulate(inst, build(inst, [0, 1], [30.0 - 10.05, 0.0]), 1.0)
    assert sim.min_distance == pytest.approx(0.0, abs=1e-9)


def test_gantt_single_task():
    inst = separate_tasks([100.0])
    svg, table = emit_gantt(inst, build(inst, [0], [0.0]))
    assert svg.count("<rect") == 3
    assert svg.startswith("<?xml") and 'version="1.1"' in svg
    assert ">0</text>" in svg
    rows = list(csv.reader(io.StringIO(table)))
    assert rows[0] == ["task", "robot", "start_s", "print_start_s", "print_end_s", "complete_s"]
    assert [float(v) for v in rows[1][2:]] == [0.0, 15.0, 115.0, 130.0]


def test_gantt_csv_completion_column():
    inst = corpus(5)[4]
    rep = solve(inst, None, "p1")
    _, table = emit_gantt(inst, rep.schedule)
    p = inst.params
    for row in list(csv.DictReader(io.StringIO(table))):
        i = int(row["task"])
        assert float(row["complete_s"]) == pytest.approx(
            float(row["start_s"]) + p.tau_log_s + inst.durations[i] + p.tau_log_e, abs=1e-12)


def test_gantt_rows_with_content_bounded_by_used_robots():
    inst = separate_tasks([100.0, 100.0, 50.0], m_robots=3, params=MissionParams(g_ut=500.0))
    rep = solve(inst, 3, "p3")
    svg, _ = emit_gantt(inst, rep.schedule)
    ys = {float(y) for y in re.findall(r'<rect x="[^"]+" y="([^"]+)"', svg)}
    assert len(ys) <= rep.schedule.n_used < 3
