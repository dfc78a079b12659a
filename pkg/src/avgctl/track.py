"""Tracking a differential-inclusion solution with the coupled fast/slow system.

For a reference ``z(.)`` with ``dz/dt in V(z)``, the horizon is cut into
intervals of length ``eps S``. On interval l the mean reference velocity
``w_l`` is projected onto the sampled hull at the current ``z_eps(t_l)``,
an averaging control realising the projection within ``eps S`` is
compiled (fast time, then stretched by ``eps``), and the coupled system is
integrated across the interval. The resulting sup-norm tracking error is
checked against

    L^-1 e^{L T} (2 L M_g + 1) eps S + 2 M_g eps S

with ``L = L_z``.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .average import auto_delta, build_schedule, drop_threshold, realize_average
from .errors import AvgctlError, DomainError, SchemaError
from .hull import caratheodory_reduce, project, rebuild, sample_atoms
from .simulate import ControlProgram, FastIntegrator, Segment, Trajectory

__all__ = [
    "Partition",
    "ReferenceTrajectory",
    "IntervalRecord",
    "TrackingReport",
    "make_partition",
    "reference_interval_average",
    "build_reference",
    "error_bound",
    "synthesize",
    "trajectory_table",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

PROJECTION_FRACTION = 0.1
OUTPUT_FRACTION = 20  # output grid step is eps S / 20


@dataclass(frozen=True)
class Partition:
    T: float
    eps_S: float
    N: int
    t: np.ndarray  # t_0 .. t_N

    @property
    def tail(self):
        return (float(self.t[-1]), self.T)

    @property
    def has_tail(self):
        return self.T - self.t[-1] > 1e-12 * max(1.0, self.T)


def make_partition(T, epsilon, S):
    """Grid ``t_l = l eps S``, ``l = 0..floor(T / (eps S))``.

    Raises
    ------
    DomainError
        Unless ``0 < S <= T / epsilon``.
    """
    T, epsilon, S = float(T), float(epsilon), float(S)
    if not (S > 0 and S <= T / epsilon * (1 + 1e-12)):
        raise DomainError(f"S must satisfy 0 < S <= T/epsilon = {T / epsilon:g}, got {S:g}")
    eps_S = epsilon * S
    N = max(1, int(math.floor(T / eps_S + 1e-9)))
    t = eps_S * np.arange(N + 1)
    if abs(T - t[-1]) <= 1e-12 * max(1.0, T):
        t[-1] = T
    return Partition(T, eps_S, N, t)


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Piecewise-linear reference ``z(t)`` on a strictly increasing grid."""

    t: np.ndarray
    z: np.ndarray  # (len(t), n)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if t.ndim != 1 or len(t) < 2 or z.shape[0] != len(t):
            raise SchemaError("reference needs at least two samples with matching shapes")
        if not np.all(np.diff(t) > 0):
            raise SchemaError("reference time grid must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(z))):
            raise SchemaError("reference values must be finite")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.z.shape[1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.stack([np.interp(t, self.t, c) for c in self.z.T], axis=-1)
        return out

    @classmethod
    def constant_derivative(cls, z0, value, T, step):
        count = max(1, math.ceil(T / step - 1e-9))
        t = np.linspace(0.0, T, count + 1)
        return cls(t, np.asarray(z0, dtype=float) + t[:, None] * np.asarray(value, dtype=float))

    @classmethod
    def from_csv(cls, path):
        """Read ``t,z_1..z_n`` columns (header required)."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0].strip() != "t":
            raise SchemaError(f"{path}: header must start with 't'")
        try:
            data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        return cls(data[:, 0], data[:, 1:])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"z_{i + 1}" for i in range(self.n)])
            for t, z in zip(self.t, self.z):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in z])


def reference_interval_average(zref, t_a, t_b):
    """Mean velocity ``(z(t_b) - z(t_a)) / (t_b - t_a)`` of the reference."""
    span = 1e-12 * max(1.0, abs(zref.t[-1]))
    if not (t_a < t_b and t_a >= zref.t[0] - span and t_b <= zref.t[-1] + span):
        raise DomainError(f"[{t_a}, {t_b}] not inside reference span [{zref.t[0]}, {zref.t[-1]}]")
    return (zref(t_b) - zref(t_a)) / (t_b - t_a)


def build_reference(scenario, S=None):
    """Reference trajectory described by the scenario, on a grid of step <= eps S / 10."""
    S = scenario.S if S is None else S
    step = scenario.epsilon * S / 10.0
    ref = scenario.reference
    if ref.kind == "constant_derivative":
        return ReferenceTrajectory.constant_derivative(scenario.z0, ref.value, scenario.T, step)
    if ref.kind == "relaxed":
        from .relax import RelaxedControl, solve_relaxed_ode

        rc = RelaxedControl.from_pieces(ref.pieces)
        return solve_relaxed_ode(scenario.slow, scenario.z0, rc, step)
    zref = ReferenceTrajectory.from_csv(ref.path)
    if zref.n != scenario.slow.n:
        raise SchemaError(f"reference file has {zref.n} z-columns, expected {scenario.slow.n}")
    if zref.t[0] > 1e-12 or zref.t[-1] < scenario.T * (1 - 1e-12):
        raise SchemaError(f"reference file must span [0, {scenario.T}]")
    return zref


def error_bound(L_z, T, M_g, eps_S):
    """Tracking bounds ``(bound_paper, bound_limit)``.

    ``bound_paper = L^-1 e^{LT} (2 L M_g + 1) eps S + 2 M_g eps S``;
    ``bound_limit`` replaces ``e^{LT}`` by ``e^{LT} - 1`` (what the
    per-interval recursion actually sums to) and stays finite at ``L = 0``,
    where ``bound_paper`` is reported as infinite.
    """
    if min(L_z, T, M_g) < 0 or not eps_S > 0:
        raise DomainError("error_bound needs L_z, T, M_g >= 0 and eps_S > 0")
    tail = 2.0 * M_g * eps_S
    growth = 2.0 * L_z * M_g + 1.0
    if L_z == 0:
        return math.inf, T * growth * eps_S + tail
    closed = math.exp(L_z * T) / L_z * growth * eps_S + tail
    limit = math.expm1(L_z * T) / L_z * growth * eps_S + tail
    return closed, limit


@dataclass
class IntervalRecord:
    l: int
    t_l: float
    w: np.ndarray
    v: np.ndarray
    projection_dist: float
    average_error: float
    average_bound: float
    delta: float
    support: int
    z_err: float

    def to_dict(self):
        return {
            "l": self.l,
            "t_l": self.t_l,
            "projection_dist": self.projection_dist,
            "average_error": self.average_error,
            "z_err": self.z_err,
            "average_bound": self.average_bound,
            "delta": self.delta,
            "support": self.support,
            "w": self.w.tolist(),
            "v": self.v.tolist(),
        }


@dataclass
class TrackingReport:
    eps: float
    S: float
    N: int
    sup_error: float
    bound_paper: float
    bound_limit: float
    intervals: List[IntervalRecord]
    passed: bool
    reasons: List[str] = field(default_factory=list)
    max_projection_dist: float = 0.0
    z_end: Optional[np.ndarray] = None

    @property
    def eps_S(self):
        return self.eps * self.S

    def to_dict(self):
        finite = math.isfinite(self.bound_paper)
        return {
            "sup_error": self.sup_error,
            "bound_paper": self.bound_paper if finite else None,
            "bound_paper_infinite": not finite,
            "bound_limit": self.bound_limit,
            "eps": self.eps,
            "S": self.S,
            "N": self.N,
            "pass": self.passed,
            "reasons": list(self.reasons),
            "max_projection_dist": self.max_projection_dist,
            "z_end": None if self.z_end is None else self.z_end.tolist(),
            "intervals": [r.to_dict() for r in self.intervals],
        }


def _tag_interval(exc, l):
    exc.interval = l
    exc.args = (f"interval {l}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
    return exc


def synthesize(scenario, zref, S=None, h_fast=None):
    """Build the tracking control for ``zref`` and simulate it.

    Parameters
    ----------
    scenario : Scenario
    zref : ReferenceTrajectory
        Must span ``[0, T]``.
    S : float, optional
        Fast-time window (default ``scenario.S``).
    h_fast : float, optional
        RK4 step in fast time (default ``scenario.fast_step(S)``).

    Returns
    -------
    program : ControlProgram
        Real-time control on ``[0, T]``.
    trajectory : Trajectory
        Coupled solution on the integrator grid.
    report : TrackingReport
    """
    fast, slow = scenario.fast, scenario.slow
    eps = fast.epsilon
    S = scenario.S if S is None else float(S)
    part = make_partition(scenario.T, eps, S)
    eps_S = part.eps_S
    h = scenario.fast_step(S) if h_fast is None else float(h_fast)
    if zref.t[0] > 1e-12 or zref.t[-1] < scenario.T * (1 - 1e-12):
        raise DomainError(f"reference must span [0, {scenario.T}]")

    witnesses = sample_atoms(slow, scenario.z0, scenario.atoms_per_axis, scenario.seed)
    integ = FastIntegrator(fast.A, fast.B, slow, eps, fast.y0, scenario.z0, h)
    segments = []
    records = []
    for l in range(part.N):
        t_l, t_next = float(part.t[l]), float(part.t[l + 1])
        try:
            z_l = integ.z.copy()
            w = reference_interval_average(zref, t_l, t_next)
            P = rebuild(slow, witnesses, z_l)
            v, comb, dist = project(w, P)
            comb = caratheodory_reduce(comb, P.G)
            drop = drop_threshold(slow, eps_S)
            dropped = float(np.sum(comb.weights[comb.weights < drop]))
            if scenario.delta == "auto":
                tol = eps_S - 2.0 * slow.M_g * dropped
                delta = auto_delta(slow, S, comb.weights, tol, drop)
            else:
                delta = min(float(scenario.delta), auto_delta(slow, S, comb.weights, math.inf, drop))
            sched = build_schedule(comb, P, integ.y, S, delta, fast, scenario.tau_min, drop)
            avg = realize_average(sched, fast, slow, z_l, h)
        except AvgctlError as exc:
            raise _tag_interval(exc, l)
        for seg in avg.control.segments:
            integ.advance(seg.duration, u=seg.u, steer=seg.steer)
        integ.t = t_next
        integ._t[-1] = t_next
        real = list(avg.control.to_real_time(eps, t_l).segments)
        last = real[-1]
        real[-1] = Segment(last.start, t_next - last.start, last.u, last.steer)  # snap to the grid
        segments.extend(real)
        records.append(
            IntervalRecord(
                l=l,
                t_l=t_l,
                w=w,
                v=v,
                projection_dist=dist,
                average_error=avg.error,
                average_bound=avg.bound,
                delta=delta,
                support=len(comb),
                z_err=float(np.linalg.norm(z_l - zref(t_l))),
            )
        )
    if part.has_tail:
        t_N = float(part.t[-1])
        u_last = ControlProgram(eps, tuple(segments)).final_u()
        integ.advance((scenario.T - t_N) / eps, u=u_last)
        integ.t = scenario.T
        integ._t[-1] = scenario.T
        segments.append(Segment(t_N, scenario.T - t_N, u=u_last))

    program = ControlProgram(eps, tuple(segments))
    program.check_tiling(0.0, scenario.T)
    traj = integ.trajectory()
    errors = np.linalg.norm(traj.z - zref(traj.t), axis=1)
    sup_error = float(np.max(errors))
    bound_paper, bound_limit = error_bound(slow.L_z, scenario.T, slow.M_g, eps_S)
    max_dist = max(r.projection_dist for r in records)

    reasons = []
    bound = bound_paper if math.isfinite(bound_paper) else bound_limit
    if not sup_error <= bound:
        reasons.append(f"sup_error {sup_error:.6g} exceeds bound {bound:.6g}")
    if max_dist > PROJECTION_FRACTION * eps_S:
        reasons.append("reference not inclusion-feasible at sampled resolution")
    report = TrackingReport(
        eps=eps,
        S=S,
        N=part.N,
        sup_error=sup_error,
        bound_paper=bound_paper,
        bound_limit=bound_limit,
        intervals=records,
        passed=not reasons,
        reasons=reasons,
        max_projection_dist=max_dist,
        z_end=traj.z[-1].copy(),
    )
    return program, traj, report


def trajectory_table(traj, program, zref, step):
    """Output-grid table ``(header, rows)`` sampled every ``step``.

    Columns are ``t, y_1..y_m, z_1..z_n, u_1..u_k, zref_1..zref_n``.
    """
    out = traj.resample(step, program.t_end)
    U = np.array([program.u(t) for t in out.t])
    Z = zref(out.t)
    m, n, k = out.y.shape[1], out.z.shape[1], U.shape[1]
    header = (
        ["t"]
        + [f"y_{i + 1}" for i in range(m)]
        + [f"z_{i + 1}" for i in range(n)]
        + [f"u_{i + 1}" for i in range(k)]
        + [f"zref_{i + 1}" for i in range(n)]
    )
    return header, np.column_stack([out.t, out.y, out.z, U, Z])


def write_trajectory_csv(path, traj, program, zref, step):
    """Write :func:`trajectory_table` with 17 significant digits."""
    header, rows = trajectory_table(traj, program, zref, step)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(f"{v:.17g}" for v in r) + "\n")
    return rows.shape[0]


def read_trajectory_csv(path):
    """Parse a trajectory CSV; returns ``(header, rows)``."""
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, rows
