import math

import numpy as np
import pytest

from avgctl.average import (
    LAMBDA_MIN,
    Hold,
    Move,
    apriori_bound,
    auto_delta,
    build_schedule,
    drop_threshold,
    hold_time,
    realize_average,
)
from avgctl.errors import ScheduleInfeasible
from avgctl.hull import ConvexCombination, VPolytope, project, sample_atoms
from avgctl.model import Box, FastSystem, SlowDynamics
from avgctl.steer import steer_floor

HALF_PI = math.pi / 2
SCALAR = FastSystem(1.0, [[0.0]], [[1.0]], [0.0])


def sine_slow(g="sin(y1)", M_g=1.0):
    return SlowDynamics((g,), k=1, m=1, M_g=M_g, L_z=0.0, L_y=1.0,
                        u_box=Box([-1.0], [1.0]), y_box=Box([-HALF_PI], [HALF_PI]))


def two_atoms(slow):
    U = np.zeros((2, 1))
    Y = np.array([[HALF_PI], [-HALF_PI]])
    G = slow.batch(U, Y, np.zeros((2, 1)))
    return VPolytope(np.zeros(1), U, Y, G, {})


def run_two_atom(delta, rk4_step=1e-3):
    slow = sine_slow()
    P = two_atoms(slow)
    c = ConvexCombination(np.array([0, 1]), np.array([0.6, 0.4]))
    sched = build_schedule(c, P, [0.0], 1.0, delta, SCALAR)
    return sched, realize_average(sched, SCALAR, slow, [0.0], rk4_step)


def test_hold_time_examples():
    assert hold_time(SCALAR, np.zeros(1), np.zeros(1), 0.01) == pytest.approx(0.01 / 1e-12)
    assert hold_time(SCALAR, np.array([2.0]), np.zeros(1), 0.01) == pytest.approx(0.005, rel=1e-9)
    di = FastSystem(1.0, [[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [0.0, 0.0])
    # A y_j = 0 for y_j = (1, 0); ||A||_2 = 1
    assert hold_time(di, np.zeros(1), np.array([1.0, 0.0]), 0.1) == pytest.approx(1.0, rel=1e-9)


def test_schedule_single_atom():
    slow = sine_slow()
    P = two_atoms(slow)
    sched = build_schedule(ConvexCombination(np.array([0]), np.ones(1)), P, [0.0], 1.0, 0.01, SCALAR)
    assert isinstance(sched.entries[0], Move) and sched.entries[0].duration == 0.01
    assert sched.move_measure()[0] <= 0.02
    assert sum(e.duration for e in sched.entries) == pytest.approx(1.0, abs=1e-12)


def test_schedule_windows():
    sched, _ = run_two_atom(0.01)
    np.testing.assert_allclose(sched.boundaries, [0.0, 0.6, 1.0], atol=1e-12)
    assert all(isinstance(e, (Move, Hold)) for e in sched.entries)


def test_schedule_infeasible_delta():
    slow = sine_slow()
    P = two_atoms(slow)
    c = ConvexCombination(np.array([0, 1]), np.array([0.5, 0.5]))
    with pytest.raises(ScheduleInfeasible, match="lambda=0.5"):
        build_schedule(c, P, [0.0], 1.0, 0.3, SCALAR)


def test_schedule_moves_halve_and_measure_bounded():
    slow = sine_slow()
    U = np.array([[0.8], [-0.5]])
    Y = np.array([[1.0], [-0.7]])
    P = VPolytope(np.zeros(1), U, Y, slow.batch(U, Y, np.zeros((2, 1))), {})
    c = ConvexCombination(np.array([0, 1]), np.array([0.3, 0.7]))
    sched = build_schedule(c, P, [0.0], 1.0, 0.02, SCALAR)
    assert np.all(sched.move_measure() <= 2 * 0.02 + 1e-15)
    for j in range(2):
        moves = [e.duration for e in sched.entries if isinstance(e, Move) and e.atom == j]
        assert moves[0] == 0.02
        assert all(b <= a / 2 * (1 + 1e-12) for a, b in zip(moves, moves[1:]))


def test_lemma_example_error_and_rate():
    _, coarse = run_two_atom(0.01)
    assert coarse.target[0] == pytest.approx(0.2, abs=1e-15)
    assert coarse.error <= coarse.bound
    assert coarse.error <= 0.01
    _, fine = run_two_atom(0.001)
    assert fine.error <= fine.bound
    assert fine.error <= coarse.error / 5
    np.testing.assert_array_equal(coarse.hold_drift, 0.0)


def test_error_recomputable_from_trajectory():
    sched, res = run_two_atom(0.01)
    q = res.trajectory.q[-1]
    assert res.error == pytest.approx(float(np.linalg.norm(q / sched.S - res.target)), abs=1e-15)
    res.control.check_tiling(0.0, 1.0)


def test_constant_g_is_exact():
    slow = sine_slow("0.25 + 0*y1", M_g=0.3)
    P = two_atoms(slow)
    sched = build_schedule(ConvexCombination(np.array([0]), np.ones(1)), P, [0.3], 1.0, 0.05, SCALAR)
    res = realize_average(sched, SCALAR, slow, [0.0], 1e-2)
    assert res.error <= 1e-10


def test_small_weights_dropped_and_charged():
    slow = sine_slow()
    P = two_atoms(slow)
    c = ConvexCombination(np.array([0, 1]), np.array([1 - 5e-4, 5e-4]))
    sched = build_schedule(c, P, [0.0], 1.0, 0.01, SCALAR)
    assert len(sched.weights) == 1 and sched.dropped_weight == pytest.approx(5e-4)
    assert apriori_bound(slow, sched) >= 2 * slow.M_g * 5e-4
    assert LAMBDA_MIN <= drop_threshold(slow, 0.05) <= 0.1


def test_auto_delta_meets_tolerance():
    slow = sine_slow()
    d = auto_delta(slow, 1.0, [0.6, 0.4], 0.05)
    assert d * (4 * slow.M_g / 0.4 + slow.L_y) == pytest.approx(0.025)
    assert d <= 0.4 / 8


def test_random_instances_within_bound(rng):
    """Seeded random (A, B, g, combination) instances: error <= bound, drift <= delta."""
    slow = SlowDynamics(
        ("sin(y1) + 0.3*u1", "cos(y2)*tanh(y1)", "0.5*sin(y1 - y2)"), k=1, m=2, M_g=2.0, L_z=0.0, L_y=2.0,
        u_box=Box([-1.0], [1.0]), y_box=Box([-1.0, -1.0], [1.0, 1.0]),
    )
    for trial in range(6):
        A = rng.normal(size=(2, 2)) * 0.5
        fast = FastSystem(1.0, A, [[0.0], [1.0]] if trial % 2 else [[1.0], [0.5]], [0.0, 0.0])
        P = sample_atoms(slow, np.zeros(3), 3, seed=trial)
        lam = rng.dirichlet(np.ones(4))
        idx = rng.choice(len(P), size=4, replace=False)
        w = lam @ P.G[idx]
        _, c, _ = project(w, P)
        S = 2.0
        delta = min(0.02, S * float(np.min(c.weights[c.weights >= LAMBDA_MIN])) / 10)
        step = 2e-3
        sched = build_schedule(c, P, [0.1, -0.2], S, delta, fast)
        res = realize_average(sched, fast, slow, np.zeros(3), step)
        assert res.error <= res.bound
        assert np.all(res.hold_drift <= delta + 10 * step)
        floor = steer_floor(fast.A, fast.B)
        at_floor = sum(1 for e in sched.entries if isinstance(e, Move) and e.duration == floor)
        # halving Moves sum to < 2 delta per window; re-steers pinned at the floor add their own time
        assert np.sum(sched.move_measure()) <= 2 * delta * len(sched.weights) + at_floor * floor * (1 + 1e-9)


def test_move_measure_two_delta_plus_floor_moves():
    slow = sine_slow()
    U = np.array([[0.9], [-0.9]])
    Y = np.array([[0.5], [-0.5]])
    P = VPolytope(np.zeros(1), U, Y, slow.batch(U, Y, np.zeros((2, 1))), {})
    for delta in (0.05, 0.01, 0.002):
        sched = build_schedule(ConvexCombination(np.array([0, 1]), np.array([0.5, 0.5])), P, [0.0], 1.0, delta, SCALAR)
        halving = [e.duration for e in sched.entries if isinstance(e, Move) and e.duration > 1e-7]
        pinned = [e.duration for e in sched.entries if isinstance(e, Move) and e.duration <= 1e-7]
        assert sum(halving) <= 2 * 2 * delta
        assert np.all(sched.move_measure() <= 2 * delta + len(pinned) / 2 * 1e-7 * (1 + 1e-9))
