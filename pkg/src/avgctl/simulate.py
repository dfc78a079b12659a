"""Piecewise control programs and fixed-step RK4 in fast time.

A :class:`ControlProgram` is a tiling of a time interval by Hold and Steer
segments. Programs built by the averaging step live in fast time
(``eps = 1``); :meth:`ControlProgram.to_real_time` maps them onto
``t = t0 + eps * tau``.

Integration always runs in fast time ``tau = t / eps`` on the joint state
``dy/dtau = A y + B u``, ``dz/dtau = eps g(u, y, z)``, with steps aligned to
segment boundaries (controls are smooth inside a segment, kinked between).
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from .errors import DomainError
from .steer import SteerSegment

__all__ = ["Segment", "ControlProgram", "Trajectory", "FastIntegrator", "simulate_coupled", "segment_steps"]

TILE_TOL = 1e-12
MIN_STEER_STEPS = 4


@dataclass(frozen=True)
class Segment:
    start: float
    duration: float
    u: Optional[np.ndarray] = None
    steer: Optional[SteerSegment] = None

    @property
    def kind(self):
        return "steer" if self.steer is not None else "hold"

    @property
    def end(self):
        return self.start + self.duration


@dataclass(frozen=True)
class ControlProgram:
    """Hold/Steer segments tiling ``[t_start, t_end]``.

    ``eps`` is the time-scale factor: a Steer segment's control at time
    ``t`` is its fast-time control at ``(t - start) / eps``.
    """

    eps: float
    segments: Tuple[Segment, ...]

    @property
    def t_start(self):
        return self.segments[0].start

    @property
    def t_end(self):
        return self.segments[-1].end

    def check_tiling(self, t_start=None, t_end=None):
        """Raise DomainError unless segments tile the interval without gaps or overlaps."""
        segs = self.segments
        if not segs:
            raise DomainError("empty control program")
        scale = max(1.0, abs(self.t_end))
        for a, b in zip(segs, segs[1:]):
            if abs(a.end - b.start) > TILE_TOL * scale:
                raise DomainError(f"gap/overlap between segments at t={a.end:.17g} vs {b.start:.17g}")
        for s in segs:
            if not s.duration > 0:
                raise DomainError("segment durations must be positive")
        if t_start is not None and abs(self.t_start - t_start) > TILE_TOL * scale:
            raise DomainError(f"program starts at {self.t_start}, expected {t_start}")
        if t_end is not None and abs(self.t_end - t_end) > TILE_TOL * scale:
            raise DomainError(f"program ends at {self.t_end}, expected {t_end}")

    @cached_property
    def _starts(self):
        return np.fromiter((s.start for s in self.segments), float, len(self.segments))

    def locate(self, t):
        i = int(np.searchsorted(self._starts, t, side="right")) - 1
        return self.segments[min(max(i, 0), len(self.segments) - 1)]

    def u(self, t):
        """Control value at time ``t`` (right-continuous; the end maps to the last segment)."""
        seg = self.locate(t)
        if seg.steer is None:
            return seg.u.copy()
        sigma = min(max((t - seg.start) / self.eps, 0.0), seg.steer.duration)
        return seg.steer.control(sigma)

    def final_u(self):
        return self.u(self.t_end)

    def to_real_time(self, eps, t0):
        """Map a fast-time program (starting at 0) to real time ``t0 + eps * tau``."""
        segs = []
        t = float(t0)
        for s in self.segments:
            d = s.duration * eps / self.eps
            segs.append(Segment(t, d, s.u, s.steer))
            t = t + d
        return ControlProgram(float(eps), tuple(segs))

    def concat(self, other):
        return ControlProgram(self.eps, self.segments + other.segments)

    def schedule_dump(self):
        """JSON-ready list of ``{kind, duration, target|u}`` (durations in this program's time)."""
        out = []
        for s in self.segments:
            if s.steer is None:
                out.append({"kind": "hold", "duration": s.duration, "u": s.u.tolist()})
            else:
                out.append({"kind": "steer", "duration": s.duration, "target": s.steer.y_to.tolist()})
        return out


def segment_steps(fast_duration, h_fast, steer):
    n = max(1, math.ceil(fast_duration / h_fast - 1e-9))
    if steer:
        n = max(n, MIN_STEER_STEPS)
    return n


@dataclass
class Trajectory:
    """Sampled solution on the integrator grid (real time)."""

    t: np.ndarray
    y: np.ndarray
    z: np.ndarray
    q: np.ndarray = field(default=None, repr=False)  # running integral of g in fast time

    def resample(self, step, t_end=None):
        """Linear interpolation onto ``0, step, 2 step, ...`` (plus the end point)."""
        t0 = self.t[0]
        t_end = self.t[-1] if t_end is None else t_end
        count = int(math.floor((t_end - t0) / step + 1e-9))
        grid = t0 + step * np.arange(count + 1)
        if t_end - grid[-1] > 1e-12 * max(1.0, abs(t_end)):
            grid = np.append(grid, t_end)
        else:
            grid[-1] = t_end
        y = np.column_stack([np.interp(grid, self.t, c) for c in self.y.T])
        z = np.column_stack([np.interp(grid, self.t, c) for c in self.z.T])
        return Trajectory(grid, y, z)

    def at(self, t):
        z = np.array([np.interp(t, self.t, c) for c in self.z.T])
        y = np.array([np.interp(t, self.t, c) for c in self.y.T])
        return y, z


class FastIntegrator:
    """Incremental RK4 in fast time for the pair (y, z) plus the integral of g.

    With ``freeze_z`` the slow state is held constant (the associated
    system with ``z = const``) and only the integral ``q`` of ``g`` moves.
    """

    def __init__(self, A, B, slow, eps, y0, z0, h_fast, t0=0.0, freeze_z=False, record=True):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.g = slow.point_fn()
        self.eps = float(eps)
        self.h_fast = float(h_fast)
        self.freeze_z = freeze_z
        self.record = record
        self.t = float(t0)
        self.y = np.array(y0, dtype=float)
        self.z = np.array(z0, dtype=float)
        self.q = np.zeros(self.z.size)
        # largest ||g|| seen at RK4 stages of Steer segments (steering controls are unconstrained)
        self.steer_peak = 0.0
        self._t = [self.t]
        self._y = [self.y.copy()]
        self._z = [self.z.copy()]
        self._q = [self.q.copy()]

    def advance(self, fast_duration, u=None, steer=None):
        """Integrate over one Hold (constant ``u``) or Steer segment."""
        n = segment_steps(fast_duration, self.h_fast, steer is not None)
        h = fast_duration / n
        if steer is not None:
            U = steer.controls_on_grid(n)
        else:
            U = np.broadcast_to(np.asarray(u, dtype=float), (2 * n + 1, self.B.shape[1]))
        BU = U @ self.B.T
        A, g, eps = self.A, self.g, self.eps
        y, z, q = self.y, self.z, self.q
        t_start = self.t
        frozen = self.freeze_z
        peak = 0.0
        steering = steer is not None
        for i in range(n):
            u0, u1, u2 = U[2 * i], U[2 * i + 1], U[2 * i + 2]
            b0, b1, b2 = BU[2 * i], BU[2 * i + 1], BU[2 * i + 2]
            if frozen:
                k1y = A @ y + b0
                y2 = y + 0.5 * h * k1y
                k2y = A @ y2 + b1
                y3 = y + 0.5 * h * k2y
                k3y = A @ y3 + b1
                y4 = y + h * k3y
                k4y = A @ y4 + b2
                g1 = np.array(g(u0, y, z))
                g2 = np.array(g(u1, y2, z))
                g3 = np.array(g(u1, y3, z))
                g4 = np.array(g(u2, y4, z))
                y = y + (h / 6.0) * (k1y + 2 * k2y + 2 * k3y + k4y)
                q = q + (h / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
                if steering:
                    peak = max(peak, g1 @ g1, g2 @ g2, g3 @ g3, g4 @ g4)
            else:
                k1y = A @ y + b0
                g1 = np.array(g(u0, y, z))
                y2, z2 = y + 0.5 * h * k1y, z + (0.5 * h * eps) * g1
                k2y = A @ y2 + b1
                g2 = np.array(g(u1, y2, z2))
                y3, z3 = y + 0.5 * h * k2y, z + (0.5 * h * eps) * g2
                k3y = A @ y3 + b1
                g3 = np.array(g(u1, y3, z3))
                y4, z4 = y + h * k3y, z + (h * eps) * g3
                k4y = A @ y4 + b2
                g4 = np.array(g(u2, y4, z4))
                y = y + (h / 6.0) * (k1y + 2 * k2y + 2 * k3y + k4y)
                dq = (h / 6.0) * (g1 + 2 * g2 + 2 * g3 + g4)
                z = z + eps * dq
                q = q + dq
                if steering:
                    peak = max(peak, g1 @ g1, g2 @ g2, g3 @ g3, g4 @ g4)
            if self.record:
                self._t.append(t_start + eps * h * (i + 1))
                self._y.append(y)
                self._z.append(z)
                self._q.append(q)
        self.steer_peak = max(self.steer_peak, math.sqrt(peak))
        self.t = t_start + eps * fast_duration
        if self.record:
            self._t[-1] = self.t
        self.y, self.z, self.q = y, z, q
        return y

    def trajectory(self):
        return Trajectory(np.array(self._t), np.array(self._y), np.array(self._z), np.array(self._q))


def simulate_coupled(fast, slow, program, h_fast, y0=None, z0=None):
    """Integrate the coupled system under ``program`` from its start time.

    Parameters
    ----------
    fast : FastSystem
    slow : SlowDynamics
    program : ControlProgram
        Real-time program (``program.eps`` must equal ``fast.epsilon``).
    h_fast : float
        RK4 step in fast time; each segment uses the largest step not
        exceeding it that divides the segment evenly.
    y0, z0 : array_like, optional
        Initial state (default ``fast.y0`` and zeros).

    Returns
    -------
    Trajectory
        On the integrator grid (real time).
    """
    program.check_tiling()
    y0 = fast.y0 if y0 is None else y0
    z0 = np.zeros(slow.n) if z0 is None else z0
    integ = FastIntegrator(fast.A, fast.B, slow, fast.epsilon, y0, z0, h_fast, t0=program.t_start)
    for seg in program.segments:
        integ.advance(seg.duration / program.eps, u=seg.u, steer=seg.steer)
    return integ.trajectory()
