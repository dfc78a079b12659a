"""Minimum-energy steering of the associated system ``dy/dtau = A y + B u``.

With ``W(tau)`` the controllability Gramian, the control
``u(s) = B^T exp(-A^T s) xi`` with ``W(tau) xi = exp(-A tau) y_to - y_from``
moves ``y_from`` to ``y_to`` in exactly ``tau`` units of fast time.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, DomainError, SteeringIllConditioned
from .linops import as_matrix, expm, expm_cached, gramian

__all__ = [
    "SteerSegment",
    "steering_gain",
    "eval_steer_control",
    "steer_and_check",
    "steer_floor",
    "MAX_COND",
    "TAU_MIN",
]

MAX_COND = 1e12
PIVOT_TOL = 1e-14
# default floor on steering durations; callers enforce it
TAU_MIN = 1e-7
# steering floors keep the Gramian this far inside MAX_COND
FLOOR_COND = 1e10


@dataclass(frozen=True)
class SteerSegment:
    xi: np.ndarray
    duration: float
    A: np.ndarray
    B: np.ndarray
    y_from: np.ndarray
    y_to: np.ndarray
    cond: float = float("nan")

    def control(self, sigma):
        return eval_steer_control(self, sigma)

    def predicted_endpoint(self):
        """Endpoint under exact linear propagation (Cauchy formula)."""
        W = gramian(self.A, self.B, self.duration).W
        return expm(self.A, self.duration) @ (self.y_from + W @ self.xi)

    def controls_on_grid(self, n_steps):
        """Control values at the RK4 half-step grid ``sigma = j * duration / (2 n)``.

        Returns a ``(2 n + 1, k)`` array; consecutive values are related by
        one fixed propagator, so the whole grid costs a single expm.
        """
        h2 = self.duration / (2 * n_steps)
        E = expm_cached(-self.A.T, h2)
        p = np.empty((2 * n_steps + 1, self.xi.size))
        p[0] = self.xi
        for j in range(2 * n_steps):
            p[j + 1] = E @ p[j]
        return p @ self.B

    def to_dict(self):
        return {
            "xi": self.xi.tolist(),
            "duration": self.duration,
            "y_from": self.y_from.tolist(),
            "y_to": self.y_to.tolist(),
        }


def steering_gain(A, B, y_from, y_to, tau):
    """Gain ``xi`` of the minimum-energy control steering ``y_from -> y_to``.

    Raises
    ------
    SteeringIllConditioned
        If the Gramian condition estimate exceeds 1e12; a longer ``tau``
        usually helps.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    m = A.shape[0]
    y_from = np.atleast_1d(np.asarray(y_from, dtype=float))
    y_to = np.atleast_1d(np.asarray(y_to, dtype=float))
    if y_from.shape != (m,) or y_to.shape != (m,):
        raise DimensionError(f"endpoints must lie in R^{m}")
    tau = float(tau)
    if not tau > 0:
        raise DomainError(f"steering duration must be > 0, got {tau}")
    gram = gramian(A, B, tau)
    if not gram.cond_estimate <= MAX_COND:
        raise SteeringIllConditioned(
            f"Gramian condition {gram.cond_estimate:.3e} exceeds {MAX_COND:.0e} at tau={tau:g}; "
            "use a larger steering duration"
        )
    rhs = expm_cached(-A, tau) @ y_to - y_from
    lam, Q = np.linalg.eigh(gram.W)
    if lam[0] <= PIVOT_TOL * lam[-1]:
        raise SteeringIllConditioned(f"Gramian numerically singular at tau={tau:g}")
    xi = Q @ ((Q.T @ rhs) / lam)
    return SteerSegment(
        xi=xi, duration=tau, A=A, B=B, y_from=y_from, y_to=y_to, cond=gram.cond_estimate
    )


@lru_cache(maxsize=256)
def _floor_cached(a_bytes, m, b_bytes, k, tau_min):
    A = np.frombuffer(a_bytes).reshape(m, m)
    B = np.frombuffer(b_bytes).reshape(m, k)

    def ok(tau):
        return gramian(A, B, tau).cond_estimate <= FLOOR_COND

    if ok(tau_min):
        return tau_min
    lo, hi = math.log(tau_min), math.log(tau_min)
    while True:
        hi += math.log(10.0)
        if ok(math.exp(hi)):
            break
        if hi > math.log(1e6):
            raise SteeringIllConditioned("no steering duration below 1e6 has a usable Gramian")
        lo = hi
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if ok(math.exp(mid)):
            hi = mid
        else:
            lo = mid
    return math.exp(hi)


def steer_floor(A, B, tau_min=TAU_MIN):
    """Shortest steering time ``>= tau_min`` with Gramian condition ``<= 1e10``.

    For chains of integrators the condition grows like ``tau^-2(m-1)``, so
    very short re-steers are only safe when ``m = 1``.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    return _floor_cached(A.tobytes(), A.shape[0], B.tobytes(), B.shape[1], float(tau_min))


def eval_steer_control(seg, sigma):
    """``B^T exp(-A^T sigma) xi`` for local fast time ``sigma`` in the segment."""
    sigma = float(sigma)
    if not (0.0 <= sigma <= seg.duration * (1 + 1e-12)):
        raise DomainError(f"sigma={sigma} outside steering segment [0, {seg.duration}]")
    return seg.B.T @ (expm(-seg.A.T, sigma) @ seg.xi)


def steer_and_check(A, B, seg, rk4_step):
    """Integrate ``dy/dsigma = A y + B u(sigma)`` by RK4; return the endpoint miss.

    The step is shrunk so an integer number of steps tiles the segment.
    """
    if rk4_step > seg.duration / 10 * (1 + 1e-12):
        raise DomainError("rk4_step must be at most duration / 10")
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = max(10, math.ceil(seg.duration / rk4_step - 1e-9))
    h = seg.duration / n
    U = seg.controls_on_grid(n) @ B.T  # B u at half steps
    y = seg.y_from.copy()
    for i in range(n):
        bu0, bu1, bu2 = U[2 * i], U[2 * i + 1], U[2 * i + 2]
        k1 = A @ y + bu0
        k2 = A @ (y + 0.5 * h * k1) + bu1
        k3 = A @ (y + 0.5 * h * k2) + bu1
        k4 = A @ (y + h * k3) + bu2
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return float(np.linalg.norm(y - seg.y_to))
