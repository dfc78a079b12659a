import math

import numpy as np
import pytest

from avgctl.errors import DomainError, SteeringIllConditioned
from avgctl.hull import project, rebuild, sample_atoms
from avgctl.model import FastSystem, ReferenceSpec, load_scenario
from avgctl.simulate import simulate_coupled
from avgctl.track import (
    ReferenceTrajectory,
    build_reference,
    error_bound,
    make_partition,
    read_trajectory_csv,
    reference_interval_average,
    synthesize,
    write_trajectory_csv,
)

from conftest import SCENARIOS


def test_partition_examples():
    p = make_partition(1.0, 0.5, 0.4)
    assert p.eps_S == pytest.approx(0.2) and p.N == 5 and p.t[-1] == 1.0 and not p.has_tail
    p = make_partition(1.0, 1.0, 0.3)
    assert p.N == 3 and p.t[-1] == pytest.approx(0.9) and p.has_tail
    np.testing.assert_allclose(np.diff(p.t), 0.3, rtol=1e-15)
    with pytest.raises(DomainError):
        make_partition(1.0, 2.0, 0.6)
    with pytest.raises(DomainError):
        make_partition(1.0, 1.0, 0.0)


def test_interval_average_simple():
    lin = ReferenceTrajectory.constant_derivative([0.0], [0.2], 1.0, 0.01)
    assert reference_interval_average(lin, 0.0, 0.1)[0] == pytest.approx(0.2, abs=1e-15)
    const = ReferenceTrajectory([0.0, 1.0], [[0.4], [0.4]])
    assert reference_interval_average(const, 0.2, 0.3)[0] == 0.0
    with pytest.raises(DomainError):
        reference_interval_average(lin, 0.5, 1.5)


def test_interval_average_closed_form():
    # dz/dt = sin t on [0, pi], finely sampled: mean velocity over [a, a + d] is (cos a - cos(a + d)) / d
    t = np.linspace(0.0, math.pi, 200001)
    zref = ReferenceTrajectory(t, 1.0 - np.cos(t))
    d = math.pi / 10
    for a in np.arange(10) * d:
        expected = (math.cos(a) - math.cos(a + d)) / d
        assert reference_interval_average(zref, a, a + d)[0] == pytest.approx(expected, abs=1e-6)


def test_reference_validation():
    with pytest.raises(ValueError):
        ReferenceTrajectory([0.0, 0.0], [[0.0], [1.0]])
    with pytest.raises(ValueError):
        ReferenceTrajectory([0.0, 1.0], [[0.0], [np.nan]])


def test_reference_csv_round_trip(tmp_path):
    zref = ReferenceTrajectory.constant_derivative([0.1, 0.0], [0.2, -0.3], 1.0, 0.1)
    zref.write_csv(tmp_path / "ref.csv")
    back = ReferenceTrajectory.from_csv(tmp_path / "ref.csv")
    np.testing.assert_array_equal(back.t, zref.t)
    np.testing.assert_array_equal(back.z, zref.z)


def test_error_bound_examples():
    closed, limit = error_bound(1.0, 1.0, 1.0, 0.01)
    assert closed == pytest.approx(math.e * 0.03 + 0.02, rel=1e-12)
    assert closed == pytest.approx(0.10155, abs=1e-5)
    assert limit == pytest.approx((math.e - 1) * 0.03 + 0.02, rel=1e-12)
    closed, limit = error_bound(0.0, 1.0, 1.0, 0.01)
    assert closed == math.inf and limit == pytest.approx(0.03)
    closed, limit = error_bound(0.1, 1.0, 1.0, 1e-6)
    assert closed <= 1e-5 * 15 and limit <= closed
    with pytest.raises(DomainError):
        error_bound(-1.0, 1.0, 1.0, 0.01)


@pytest.fixture(scope="module")
def flat():
    return load_scenario(SCENARIOS / "sin_flat.json")


@pytest.fixture(scope="module")
def flat_run(flat):
    zref = build_reference(flat, 0.2)
    return zref, synthesize(flat, zref, S=0.2)


def test_sin_flat_within_bound(flat_run):
    _, (program, traj, report) = flat_run
    assert report.N == 5
    assert report.passed and report.sup_error <= report.bound_paper
    assert report.sup_error <= 0.05
    assert report.bound_paper == pytest.approx(math.exp(0.1) / 0.1 * 1.2 * 0.2 + 2 * 0.2)
    program.check_tiling(0.0, 1.0)
    assert max(r.projection_dist for r in report.intervals) <= 0.02


def test_sin_flat_against_fine_reintegration(flat, flat_run):
    zref, (program, traj, report) = flat_run
    fine = simulate_coupled(flat.fast, flat.slow, program, flat.fast_step(0.2) / 4, z0=flat.z0)
    assert abs(fine.z[-1, 0] - traj.z[-1, 0]) <= 1e-6
    grid = np.linspace(0.0, 1.0, 401)
    sup_fine = np.max(np.abs(np.interp(grid, fine.t, fine.z[:, 0]) - zref(grid)[:, 0]))
    assert sup_fine <= report.bound_paper
    assert sup_fine == pytest.approx(report.sup_error, abs=2e-3)


def test_report_consistency(flat_run):
    zref, (program, traj, report) = flat_run
    errs = np.linalg.norm(traj.z - zref(traj.t), axis=1)
    assert report.sup_error >= np.max(errs)
    for r in report.intervals:
        assert r.average_error <= r.average_bound
        assert r.average_bound <= 0.2 * (1 + 1e-12)
        _, z_l = traj.at(r.t_l)
        assert r.z_err == pytest.approx(float(np.linalg.norm(z_l - zref(r.t_l))), abs=1e-12)
    d = report.to_dict()
    for key in ("sup_error", "bound_paper", "bound_limit", "eps", "S", "N", "pass", "intervals"):
        assert key in d
    assert set(d["intervals"][0]) >= {"l", "t_l", "projection_dist", "average_error", "z_err"}


def test_y_continuity_across_boundaries(flat_run):
    _, (program, traj, report) = flat_run
    for r in report.intervals[1:]:
        i = int(np.searchsorted(traj.t, r.t_l))
        # the boundary is one stored sample shared by both intervals
        assert traj.t[i] == pytest.approx(r.t_l, abs=1e-15)
        assert np.sum(np.abs(traj.t - r.t_l) <= 1e-12) == 1


def test_constant_reference_stays_close(flat):
    sc = flat.replace(reference=ReferenceSpec("constant_derivative", value=(0.0,)))
    _, _, report = synthesize(sc, build_reference(sc, 0.2), S=0.2)
    assert report.sup_error <= 2 * 0.2


def test_infeasible_reference_is_flagged(flat):
    sc = flat.replace(reference=ReferenceSpec("constant_derivative", value=(2.0,)))
    _, _, report = synthesize(sc, build_reference(sc, 0.5), S=0.5)
    assert all(r.projection_dist >= 1 - 1e-12 for r in report.intervals)
    assert not report.passed
    assert "reference not inclusion-feasible at sampled resolution" in report.reasons


def test_epsilon_independence_small(flat):
    bounds, errors = [], []
    for eps in (0.1, 1.0, 10.0):
        sc = flat.replace(fast=FastSystem(eps, flat.fast.A, flat.fast.B, flat.fast.y0))
        S = 0.2 / eps
        _, _, rep = synthesize(sc, build_reference(sc, S), S=S)
        assert rep.passed
        bounds.append(rep.bound_paper)
        errors.append(rep.sup_error)
    assert max(bounds) == pytest.approx(min(bounds))
    assert max(errors) <= 2 * min(errors)


def test_relaxed_reference_and_inclusion_sanity():
    sc = load_scenario(SCENARIOS / "sin_relaxed.json")
    zref = build_reference(sc)
    P = sample_atoms(sc.slow, sc.z0, sc.atoms_per_axis, sc.seed)
    probes = np.linspace(0.0, sc.T, 102)[1:-1]
    h = 1e-4
    for t in probes:
        fd = (zref(t + h) - zref(t - h)) / (2 * h)
        _, _, dist = project(fd, rebuild(sc.slow, P, zref(t)))
        assert dist <= 1e-6
    _, _, report = synthesize(sc, zref)
    assert report.passed


def test_errors_carry_interval_index(flat, monkeypatch):
    import avgctl.track as track

    calls = {"n": 0}
    real = track.rebuild

    def flaky(*args):
        calls["n"] += 1  # one rebuild per interval
        if calls["n"] == 3:
            raise SteeringIllConditioned("forced")
        return real(*args)

    monkeypatch.setattr(track, "rebuild", flaky)
    with pytest.raises(SteeringIllConditioned) as info:
        synthesize(flat, build_reference(flat, 0.2), S=0.2)
    assert info.value.interval == 2
    assert str(info.value) == "interval 2: forced"


def test_trajectory_csv_self_ingestion(tmp_path, flat_run):
    zref, (program, traj, report) = flat_run
    rows = write_trajectory_csv(tmp_path / "traj.csv", traj, program, zref, 0.01)
    header, data = read_trajectory_csv(tmp_path / "traj.csv")
    assert header == ["t", "y_1", "z_1", "u_1", "zref_1"]
    assert data.shape == (rows, 5) and rows == 101
    assert np.all(np.diff(data[:, 0]) > 0) and data[-1, 0] == 1.0
    np.testing.assert_allclose(data[:, 4], zref(data[:, 0])[:, 0], rtol=0, atol=0)
    assert np.max(np.abs(data[:, 2] - data[:, 4])) <= report.sup_error + 1e-12
