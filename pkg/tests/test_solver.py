import json
from pathlib import Path

import numpy as np
import pytest

from aeroprint import (DiffConstraintSystem, MissionParams, Schedule, SolveLimits, brute_force_schedule,
                       earliest_starts, generate_rect_instance, load_instance, make_instance, solve,
                       sweep_fleet)
from aeroprint.solver import objective_terms
from aeroprint.validate import check_schedule

from conftest import crossing_pair, separate_tasks
from corpus import corpus

FIXTURES = Path(__file__).parent / "fixtures"


def test_earliest_starts_examples():
    assert earliest_starts(DiffConstraintSystem(3)) == [0.0, 0.0, 0.0]
    chain = DiffConstraintSystem(3)
    chain.add(0, 1, 10)
    chain.add(1, 2, 10)
    assert earliest_starts(chain) == [0.0, 10.0, 20.0]
    cyc = DiffConstraintSystem(2)
    cyc.add(1, 0, 1)
    cyc.add(0, 1, 1)
    assert earliest_starts(cyc) is None


def test_earliest_starts_negative_arcs_respect_origin():
    sys_ = DiffConstraintSystem(2)
    sys_.add(0, 1, -5)
    sys_.add(1, 0, 3)
    assert earliest_starts(sys_) == [3.0, 0.0]


def test_single_task():
    rep = solve(separate_tasks([100.0]), 1, "p1")
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(130.0) and rep.j_ms == pytest.approx(130.0)


def test_two_parallel_tasks():
    rep = solve(separate_tasks([100.0, 100.0], m_robots=2), 2, "p1")
    assert rep.j_ms == pytest.approx(130.0)
    assert sorted(rep.schedule.robot_of) == [0, 1]


def test_two_tasks_one_robot_serialised():
    rep = solve(separate_tasks([100.0, 100.0]), 1, "p1")
    assert rep.j_ms == pytest.approx(260.0)


def two_crossings():
    params = MissionParams(fifo_buffer=0.05)
    paths = [
        [[0, 0, 0], [4, 0, 0]], [[2, -2, 0], [2, 2, 0]],
        [[20, 0, 0], [24, 0, 0]], [[22, -2, 0], [22, 2, 0]],
    ]
    return make_instance(paths, [1.0] * 4, [(0, 2)], [(3.0, 1e5)] * 2, params)


def test_four_task_two_conflict_fixture_matches_oracle():
    inst = two_crossings()
    assert len(inst.conflicts.pairs) == 2
    rep = solve(inst, 2, "p1")
    ref = brute_force_schedule(inst, 2, "p1")
    assert rep.status == ref.status == "optimal"
    assert rep.objective == pytest.approx(ref.objective, abs=1e-6)
    assert check_schedule(inst, rep.schedule) == []


def test_triangle_fixture_recorded_optimum():
    doc = json.loads((FIXTURES / "triangle.json").read_text())
    inst = load_instance(json.dumps(doc["mission"]))
    rep = solve(inst, doc["m_robots"], doc["variant"])
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(doc["oracle_objective"], abs=1e-6)
    assert brute_force_schedule(inst, doc["m_robots"], doc["variant"]).objective == pytest.approx(
        doc["oracle_objective"], abs=1e-9)


def test_starts_are_componentwise_minimal():
    for inst in [two_crossings(), crossing_pair(), *corpus(16)[8:16]]:
        rep = solve(inst, None, "p2")
        if rep.schedule is None:
            continue
        s = rep.schedule
        assert check_schedule(inst, s, tol=1e-9) == []
        for i in range(inst.n_tasks):
            starts = list(s.starts)
            starts[i] -= 1e-6
            moved = Schedule.build(inst, s.robot_of, starts, s.m_robots)
            assert check_schedule(inst, moved, tol=1e-9), f"task {i} could start earlier"


def test_delaying_starts_never_helps(rng):
    inst = two_crossings()
    for variant in ("p1", "p2", "p3"):
        rep = solve(inst, 2, variant)
        base = rep.objective
        for _ in range(200):
            starts = np.array(rep.schedule.starts) + rng.choice([0, 0, 0.5, 3.0, 25.0], size=inst.n_tasks)
            moved = Schedule.build(inst, rep.schedule.robot_of, starts, 2)
            if check_schedule(inst, moved):
                continue
            assert objective_terms(inst, moved, variant)[0] >= base - 1e-9


def test_solutions_pass_checker_and_are_deterministic():
    for inst in corpus(20):
        a = solve(inst, None, "p3")
        b = solve(inst, None, "p3")
        assert a.status == b.status
        if a.schedule is not None:
            assert check_schedule(inst, a.schedule) == []
            assert a.objective == b.objective
            assert a.schedule.starts == b.schedule.starts
            assert a.schedule.used == tuple(int(bool(s)) for s in a.schedule.sequences)


def test_material_infeasible_has_certificate():
    inst = separate_tasks([10.0, 10.0, 10.0], volume=2.0, capacity=2.5, m_robots=2)
    rep = solve(inst, 2, "p1")
    assert rep.status == "infeasible"
    assert "material" in rep.certificate
    assert rep.schedule is None


def test_battery_limits_respected():
    inst = separate_tasks([100.0, 100.0, 100.0], battery=300.0, m_robots=2)
    rep = solve(inst, 2, "p1")
    assert rep.status == "optimal"
    assert max(rep.schedule.flight_time) <= 300.0
    assert rep.j_ms == pytest.approx(260.0)


def test_precedence_chain():
    inst = separate_tasks([10.0, 20.0, 30.0], edges=[(0, 1), (1, 2)], m_robots=3)
    rep = solve(inst, 3, "p1")
    # printing ends gate printing starts; the logistics legs overlap
    assert list(rep.schedule.starts) == pytest.approx([0.0, 10.0, 30.0])
    assert rep.j_ms == pytest.approx(30.0 + 30.0 + 30.0)


def test_p3_drops_idle_robots():
    # two robots: 130 + 2 * 200; one robot: 260 + 200
    inst = separate_tasks([100.0, 100.0], m_robots=2, params=MissionParams(g_ut=200.0))
    p1 = solve(inst, 2, "p1")
    p3 = solve(inst, 2, "p3")
    assert p1.schedule.n_used == 2
    assert p3.schedule.n_used == 1
    assert p3.objective == pytest.approx(260.0 + 200.0)
    cheap = solve(inst.with_params(g_ut=100.0), 2, "p3")
    assert cheap.schedule.n_used == 2 and cheap.objective == pytest.approx(130.0 + 200.0)


def test_timeout_reports_gap():
    inst = generate_rect_instance(2, 2, 0.5, 3, 3, 2, MissionParams(fifo_buffer=0.05))
    rep = solve(inst, 2, "p1", SolveLimits(time_limit=1.0))
    assert rep.status in ("feasible-timeout", "timeout")
    if rep.status == "feasible-timeout":
        assert 0 <= rep.bound <= rep.objective
        assert rep.gap > 0
        assert check_schedule(inst, rep.schedule) == []


def test_node_limit():
    inst = corpus(30)[29]
    rep = solve(inst, None, "p1", SolveLimits(node_limit=1))
    assert rep.nodes <= 2


def test_sweep_flags_capacity_starved_rows():
    inst = separate_tasks([50.0, 50.0, 50.0], volume=1.0, capacity=1.5, m_robots=1)
    rows = sweep_fleet(inst, 1, 4, "p1")
    assert [m for m, _ in rows] == [1, 2, 3, 4]
    assert rows[0][1].status == "infeasible"
    feasible = [r.j_ms for _, r in rows if r.status == "optimal"]
    assert all(b <= a + 1e-6 for a, b in zip(feasible, feasible[1:]))
    with pytest.raises(ValueError):
        sweep_fleet(inst, 0, 2)


def test_larger_fleet_never_hurts():
    for inst in corpus(15)[5:15]:
        prev = None
        for m in (1, 2, 3):
            rep = solve(inst, m, "p1")
            if rep.status != "optimal":
                continue
            if prev is not None:
                assert rep.j_ms <= prev + 1e-6
            prev = rep.j_ms


@pytest.mark.parametrize("order", ["importance", "chronological"])
def test_task_orders_agree(order):
    for inst in corpus(12)[6:12]:
        a = solve(inst, None, "p2", task_order=order)
        b = brute_force_schedule(inst, None, "p2")
        assert a.status == b.status
        if b.objective is not None:
            assert a.objective == pytest.approx(b.objective, abs=1e-6)
