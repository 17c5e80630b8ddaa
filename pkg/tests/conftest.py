import numpy as np
import pytest

from aeroprint import MissionParams, make_instance


def line_task(x0: float, y: float, length: float, z: float = 0.0):
    """Straight path along +x; parallel lines 5 m apart never conflict at r_c = 1."""
    return np.array([[x0, y, z], [x0 + length, y, z]])


def separate_tasks(durations, edges=(), m_robots=1, params=None, volume=1.0, capacity=None, battery=None):
    """Instance whose tasks sit on far-apart parallel lines, so the conflict set is empty."""
    params = params or MissionParams()
    paths = [line_task(0.0, 5.0 * i, d * params.v_ex) for i, d in enumerate(durations)]
    n = len(durations)
    cap = capacity if capacity is not None else volume * n
    bat = battery if battery is not None else 1e7
    return make_instance(paths, [volume] * n, list(edges), [(cap, bat)] * m_robots, params)


def crossing_pair(params=None, m_robots=2):
    """Two 10 m paths crossing at right angles through the same midpoint."""
    params = params or MissionParams(fifo_buffer=0.05)
    a = np.array([[0.0, 5.0, 0.0], [5.0, 5.0, 0.0], [10.0, 5.0, 0.0]])
    b = np.array([[5.0, 0.0, 0.0], [5.0, 5.0, 0.0], [5.0, 10.0, 0.0]])
    return make_instance([a, b], [1.0, 1.0], [], [(10.0, 1e6)] * m_robots, params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
