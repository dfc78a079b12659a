"""Fast-time controls whose average of g hits a prescribed hull point.

Given a convex combination ``v = sum_j lambda_j g(u_j, y_j, z)`` and a window
``[0, S]``, the window is split into sub-windows of length ``lambda_j S``.
In sub-window j the control steers ``y`` onto ``y_j`` (a Move), holds
``u_j`` while ``y`` stays within ``delta`` of ``y_j`` (a Hold), and re-steers
with geometrically shorter Moves, so the total Move time is below
``2 delta``. The time average of ``g`` over the window is then within
``delta (4 M_g / min_j lambda_j S + L_y)`` of ``v``.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import NumericalFailure, ScheduleInfeasible
from .linops import norm2
from .simulate import ControlProgram, FastIntegrator, Segment, Trajectory
from .steer import TAU_MIN, steer_floor, steering_gain

__all__ = [
    "Move",
    "Hold",
    "DwellSchedule",
    "AverageResult",
    "hold_time",
    "auto_delta",
    "drop_threshold",
    "build_schedule",
    "realize_average",
    "LAMBDA_MIN",
]

LAMBDA_MIN = 1e-3
MAX_ENTRIES = 2_000_000


@dataclass(frozen=True)
class Move:
    atom: int
    target: np.ndarray
    duration: float


@dataclass(frozen=True)
class Hold:
    atom: int
    u: np.ndarray
    duration: float


@dataclass(frozen=True)
class DwellSchedule:
    S: float
    delta: float
    y_start: np.ndarray
    entries: Tuple[object, ...]
    boundaries: np.ndarray  # S_0 = 0 < S_1 < ... < S_l = S
    weights: np.ndarray  # after dropping weights below LAMBDA_MIN
    atom_u: np.ndarray
    atom_y: np.ndarray
    atom_g: np.ndarray
    hold_times: np.ndarray
    drift_rates: np.ndarray
    dropped_weight: float
    target: np.ndarray  # barycenter of the combination before dropping

    @property
    def windows(self):
        return np.diff(self.boundaries)

    def move_measure(self):
        """Total Move time inside each atom window."""
        out = np.zeros(len(self.weights))
        for e in self.entries:
            if isinstance(e, Move):
                out[e.atom] += e.duration
        return out

    def to_json(self):
        """Diagnostic dump: list of ``{kind, duration, target|u}``."""
        out = []
        for e in self.entries:
            if isinstance(e, Move):
                out.append({"kind": "move", "duration": e.duration, "target": e.target.tolist()})
            else:
                out.append({"kind": "hold", "duration": e.duration, "u": e.u.tolist()})
        return out


@dataclass
class AverageResult:
    achieved_average: np.ndarray
    target: np.ndarray
    error: float
    bound: float
    control: ControlProgram
    y_end: np.ndarray
    trajectory: Trajectory
    hold_drift: np.ndarray  # max ||y - y_j|| over the Holds of each window
    schedule: DwellSchedule
    steer_peak: float = 0.0  # max ||g|| during Moves


def hold_time(fast, u_j, y_j, delta):
    """Time for which holding ``u_j`` from ``y_j`` keeps ``||y - y_j|| <= delta``.

    Inside the ball, ``||dy/dtau|| <= ||A y_j + B u_j|| + ||A|| delta =: c``,
    so ``delta / c`` is a safe hold. (A bound on ``g`` says nothing about
    ``dy/dtau``, hence the drift rate rather than ``M_g``.)
    """
    A, B = fast.A, fast.B
    c = float(np.linalg.norm(A @ y_j + B @ u_j)) + norm2(A) * delta + 1e-12
    return delta / c


def drop_threshold(slow, tolerance):
    """Weight below which an atom is dropped when the averaging tolerance is ``tolerance``.

    Dropping costs at most ``2 M_g`` per unit of dropped weight; with at most
    ``n + 1`` atoms this threshold keeps that cost within ``tolerance / 4``.
    Never below ``LAMBDA_MIN`` and never above 0.1.
    """
    return min(0.1, max(LAMBDA_MIN, tolerance / (8.0 * slow.M_g * (slow.n + 1))))


def auto_delta(slow, S, weights, tolerance, drop_below=LAMBDA_MIN):
    """Largest delta whose a-priori averaging bound is at most ``tolerance / 2``.

    Also capped at ``min window / 8`` so every window can host its schedule.
    """
    w = np.asarray(weights, dtype=float)
    keep = w >= drop_below
    w = w[keep] if np.any(keep) else w[w == w.max()]
    w_min = float(np.min(w / w.sum())) * S
    return min(tolerance / (2.0 * (4.0 * slow.M_g / w_min + slow.L_y)), w_min / 8.0)


def apriori_bound(slow, sched, steer_peak=0.0):
    """Averaging error bound for a schedule (including dropped weights).

    ``M_g`` is only checked on the sampling boxes, while steering controls
    are unconstrained; ``steer_peak`` (the largest ``||g||`` met during the
    Moves) replaces ``M_g`` in the Move term when it is larger.
    """
    M = max(slow.M_g, steer_peak)
    nominal = sched.delta * (4.0 * M / float(np.min(sched.windows)) + slow.L_y)
    # if the steering floor stretched the Moves past 2 delta, use the actual Move time
    measured = 2.0 * M * float(np.sum(sched.move_measure())) / sched.S + slow.L_y * sched.delta
    return max(nominal, measured) + 2.0 * slow.M_g * sched.dropped_weight


def build_schedule(c, P, y_start, S, delta, fast, tau_min=TAU_MIN, drop_below=LAMBDA_MIN):
    """Move/Hold dwell schedule on ``[0, S]`` for combination ``c`` of ``P``'s atoms.

    Weights below ``drop_below`` (default ``LAMBDA_MIN``) are dropped and
    the rest renormalised. In
    each atom window: Move of length ``delta`` onto ``y_j``; then Holds of
    length ``hold_time`` alternating with Moves of lengths ``delta/2,
    delta/4, ...`` (never more than half of what remains of the window, never
    below the steering floor); the last Hold runs to the window end. The
    floor is ``tau_min`` raised, if needed, until the Gramian is safely
    invertible.

    Raises
    ------
    ScheduleInfeasible
        If ``delta >= min_j lambda_j S / 4``.
    """
    idx = np.asarray(c.indices, dtype=int)
    lam = np.asarray(c.weights, dtype=float)
    target = lam @ P.G[idx]
    keep = lam >= max(drop_below, LAMBDA_MIN)
    if not np.any(keep):
        keep = lam == lam.max()
    dropped = float(lam[~keep].sum())
    idx, lam = idx[keep], lam[keep] / lam[keep].sum()
    S = float(S)
    delta = float(delta)
    bounds = np.concatenate([[0.0], S * np.cumsum(lam)])
    bounds[-1] = S
    windows = np.diff(bounds)
    bad = windows <= 4.0 * delta
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise ScheduleInfeasible(
            f"delta={delta:g} too large: window {j} has lambda={lam[j]:.6g} "
            f"(length {windows[j]:.3g} <= 4 delta)"
        )
    tau_min = steer_floor(fast.A, fast.B, tau_min)
    atom_u = P.U[idx]
    atom_y = P.Y[idx]
    atom_g = P.G[idx]
    holds = np.array([hold_time(fast, atom_u[j], atom_y[j], delta) for j in range(len(idx))])
    rates = delta / holds

    entries = []
    first = max(delta, tau_min)
    if np.any(windows <= 4.0 * first):
        raise ScheduleInfeasible(f"steering floor {tau_min:.3g} does not fit the windows")
    for j, W in enumerate(windows):
        u_j, y_j, th = atom_u[j], atom_y[j], holds[j]
        entries.append(Move(j, y_j, first))
        t = first
        nominal = delta
        while True:
            if t + th >= W:
                entries.append(Hold(j, u_j, W - t))
                break
            entries.append(Hold(j, u_j, th))
            t += th
            rest = W - t
            if rest / 2.0 < tau_min:
                entries.append(Hold(j, u_j, rest))
                break
            nominal *= 0.5
            d = max(min(nominal, rest / 2.0), tau_min)
            entries.append(Move(j, y_j, d))
            t += d
            if len(entries) > MAX_ENTRIES:
                raise ScheduleInfeasible(
                    f"schedule needs more than {MAX_ENTRIES} segments (hold time {th:.3g} "
                    f"in a window of {W:.3g}); increase delta"
                )
    return DwellSchedule(
        S=S,
        delta=delta,
        y_start=np.asarray(y_start, dtype=float).copy(),
        entries=tuple(entries),
        boundaries=bounds,
        weights=lam,
        atom_u=atom_u,
        atom_y=atom_y,
        atom_g=atom_g,
        hold_times=holds,
        drift_rates=rates,
        dropped_weight=dropped,
        target=target,
    )


def realize_average(sched, fast, slow, z_frozen, rk4_step):
    """Compile and run a schedule on the associated system with ``z`` frozen.

    Each Move becomes a minimum-energy steering segment computed from the
    simulated ``y`` at the start of the Move. The integral of
    ``g(u, y, z_frozen)`` is accumulated by the same RK4 steps.

    Returns
    -------
    AverageResult
        ``control`` is in fast time on ``[0, S]``.
    """
    z_frozen = np.atleast_1d(np.asarray(z_frozen, dtype=float))
    integ = FastIntegrator(fast.A, fast.B, slow, 1.0, sched.y_start, z_frozen, rk4_step, freeze_z=True)
    segments = []
    drift = np.zeros(len(sched.weights))
    t = 0.0
    for e in sched.entries:
        if isinstance(e, Move):
            seg = steering_gain(fast.A, fast.B, integ.y, e.target, e.duration)
            integ.advance(e.duration, steer=seg)
            segments.append(Segment(t, e.duration, steer=seg))
        else:
            start = len(integ._y) - 1
            integ.advance(e.duration, u=e.u)
            ys = np.asarray(integ._y[start:])
            drift[e.atom] = max(drift[e.atom], float(np.max(np.linalg.norm(ys - sched.atom_y[e.atom], axis=1))))
            segments.append(Segment(t, e.duration, u=np.array(e.u, dtype=float)))
        t += e.duration
    if abs(t - sched.S) > 1e-9 * max(1.0, sched.S):
        raise NumericalFailure(f"schedule spans {t}, expected {sched.S}")
    achieved = integ.q / sched.S
    error = float(np.linalg.norm(achieved - sched.target))
    return AverageResult(
        achieved_average=achieved,
        target=sched.target,
        error=error,
        bound=apriori_bound(slow, sched, integ.steer_peak),
        control=ControlProgram(1.0, tuple(segments)),
        y_end=integ.y.copy(),
        trajectory=integ.trajectory(),
        hold_drift=drift,
        schedule=sched,
        steer_peak=integ.steer_peak,
    )
