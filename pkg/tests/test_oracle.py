import numpy as np
import pytest

from aeroprint import MissionParams, OracleRefused, Schedule, brute_force_schedule
from aeroprint.solver import objective_terms
from aeroprint.validate import check_schedule

from conftest import separate_tasks
from corpus import corpus


def test_single_task():
    rep = brute_force_schedule(separate_tasks([100.0]), 1, "p1")
    assert rep.status == "optimal" and rep.objective == pytest.approx(130.0)


def test_two_tasks_zero_logistics():
    inst = separate_tasks([10.0, 10.0], params=MissionParams(tau_log_s=0.0, tau_log_e=0.0))
    rep = brute_force_schedule(inst, 1, "p1")
    assert rep.j_ms == pytest.approx(20.0)
    assert sorted(rep.schedule.starts) == pytest.approx([0.0, 10.0])


def test_refuses_large_instances():
    with pytest.raises(OracleRefused):
        brute_force_schedule(separate_tasks([1.0] * 8), 1)


def test_infeasible_when_no_assignment_fits():
    inst = separate_tasks([10.0, 10.0], volume=2.0, capacity=3.0)
    rep = brute_force_schedule(inst, 1, "p1")
    assert rep.status == "infeasible" and rep.schedule is None


def test_respects_budgets_and_checker():
    for inst in corpus(12):
        rep = brute_force_schedule(inst, None, "p3")
        if rep.schedule is None:
            continue
        assert check_schedule(inst, rep.schedule) == []


def _hand_schedules(inst):
    """Three obviously feasible plans: fully serial on robot 0, serial with idle gaps, round-robin serial."""
    occ = inst.occupancy
    order = list(inst.graph.order)
    plans = []
    for gap, spread in ((0.0, False), (7.0, False), (0.0, True)):
        t, starts, robots = 0.0, [0.0] * inst.n_tasks, [0] * inst.n_tasks
        for pos, i in enumerate(order):
            starts[i] = t
            robots[i] = pos % inst.n_robots if spread else 0
            t += occ[i] + gap
        plans.append((robots, starts))
    return plans


def test_never_worse_than_hand_schedules():
    checked = 0
    for inst in corpus(12):
        for variant in ("p1", "p2", "p3"):
            rep = brute_force_schedule(inst, None, variant)
            for robots, starts in _hand_schedules(inst):
                s = Schedule.build(inst, robots, starts, inst.n_robots)
                if check_schedule(inst, s):
                    continue  # budget-infeasible hand plan
                checked += 1
                assert rep.objective <= objective_terms(inst, s, variant)[0] + 1e-9
    assert checked > 30


def test_deterministic_tie_break():
    inst = separate_tasks([10.0, 10.0], m_robots=2)
    a = brute_force_schedule(inst, 2, "p1")
    b = brute_force_schedule(inst, 2, "p1")
    assert a.schedule.robot_of == b.schedule.robot_of == (0, 1)
    assert np.allclose(a.schedule.starts, 0.0)
