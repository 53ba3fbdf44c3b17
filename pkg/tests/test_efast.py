"""eFAST corner detection against a brute-force arc-enumeration oracle."""
import os
import subprocess
import sys

import numpy as np
import pytest

from evorbit import _accel
from evorbit.events import EventStream, make_stream
from evorbit.tracking.efast import detect_corners, efast_numba, efast_numpy

from oracles import oracle_corners, random_stream


def corner_pattern(apex=(12, 12), size=24):
    """Background flash, then a lit 90-degree quadrant ending at its apex."""
    ev = []
    t = 0.0
    for y in range(size):
        for x in range(size):
            t += 1e-6
            ev.append((t, x, y, 1))
    ax, ay = apex
    quad = [(x, y) for y in range(ay, size) for x in range(ax, size) if (x, y) != apex]
    quad.sort(key=lambda q: -(abs(q[0] - ax) + abs(q[1] - ay)))
    for x, y in quad + [apex]:
        t += 1e-6
        ev.append((t, x, y, 1))
    return EventStream.from_events(ev, size, size)


def test_empty_stream():
    assert len(detect_corners(EventStream.empty())) == 0
    assert len(detect_corners(EventStream.empty(), backend="numpy")) == 0


def test_isolated_event_is_not_a_corner():
    s = make_stream([0.5], [20], [20], [1], 40, 40)
    assert len(detect_corners(s, backend="numpy")) == 0
    assert len(oracle_corners(s)) == 0


def test_border_events_never_fire():
    s = random_stream(3, n=3000, w=14, h=14)
    idx = detect_corners(s, backend="numpy")
    assert len(idx) > 0
    assert np.all((s.x[idx] >= 4) & (s.x[idx] < 10) & (s.y[idx] >= 4) & (s.y[idx] < 10))


def test_apex_of_moving_corner_fires():
    s = corner_pattern()
    idx = detect_corners(s, backend="numpy")
    last = len(s) - 1
    assert (s.x[last], s.y[last]) == (12, 12)
    assert last in set(idx.tolist())
    assert np.array_equal(idx, oracle_corners(s))


@pytest.mark.parametrize("seed", range(5))
def test_numpy_path_matches_oracle(seed):
    s = random_stream(seed, n=2000)
    got = detect_corners(s, backend="numpy")
    assert len(got) > 0
    assert np.array_equal(got, oracle_corners(s))


def test_ties_match_oracle():
    s = random_stream(11, n=2000, n_times=200)
    assert np.array_equal(detect_corners(s, backend="numpy"), oracle_corners(s))


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("seed", range(5))
def test_numba_matches_numpy(seed):
    s = random_stream(100 + seed, n=5000, w=80, h=60)
    assert np.array_equal(efast_numba(s), efast_numpy(s))


def test_output_is_time_ordered_indices():
    s = random_stream(7, n=3000)
    idx = detect_corners(s)
    assert np.all(np.diff(idx) > 0)


def test_env_switch_forces_numpy():
    code = "from evorbit import _accel; print(_accel.backend_name())"
    env = dict(os.environ, EVORBIT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
