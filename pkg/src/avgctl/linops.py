"""Dense linear-algebra kernels: matrix exponential, Kalman rank, Gramian.

All routines take and return plain ``numpy`` arrays. Matrices are small
(desk scale, m <= 8), so clarity wins over speed here; the Gramian is the
one kernel called repeatedly, and it is memoised.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad_vec

from .errors import DimensionError, NumericalFailure

__all__ = ["Gramian", "as_matrix", "expm", "expm_cached", "kalman_rank", "ctrb", "gramian", "norm2"]

# Taylor order and the norm the scaled argument is pushed below.
_TAYLOR_ORDER = 18
_SCALED_NORM = 0.5

GRAMIAN_RTOL = 1e-10


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array."""
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise DimensionError(f"{name} must be a nonempty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DimensionError(f"{name} has non-finite entries")
    return M


def _square(M, name="matrix"):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def norm2(M):
    """Spectral norm (largest singular value)."""
    return float(np.linalg.norm(np.asarray(M, dtype=float), 2))


def expm(M, t=1.0):
    """Matrix exponential ``exp(M t)`` by scaling and squaring.

    The scaled matrix ``M t / 2**s`` has 1-norm at most 0.5, where a
    Taylor series of order 18 is accurate far below double precision;
    the result is then squared ``s`` times.

    Parameters
    ----------
    M : (m, m) array_like
        Square matrix.
    t : float
        Time multiplier.

    Returns
    -------
    (m, m) ndarray
    """
    M = _square(M)
    t = float(t)
    if not np.isfinite(t):
        raise DimensionError("t must be finite")
    X = M * t
    nrm = np.linalg.norm(X, 1)
    s = 0
    if nrm > _SCALED_NORM:
        s = int(np.ceil(np.log2(nrm / _SCALED_NORM)))
        X = X / 2.0**s
    identity = np.eye(M.shape[0])
    E = identity.copy()
    for k in range(_TAYLOR_ORDER, 0, -1):
        E = identity + (X @ E) / k
    for _ in range(s):
        E = E @ E
    return E


@lru_cache(maxsize=4096)
def _expm_cached(m_bytes, m, t):
    E = expm(np.frombuffer(m_bytes).reshape(m, m), t)
    E.setflags(write=False)
    return E


def expm_cached(M, t=1.0):
    """Memoised :func:`expm` (read-only result).

    Steering re-uses a handful of durations many times over, so the same
    propagators recur.
    """
    M = _square(M)
    return _expm_cached(M.tobytes(), M.shape[0], float(t))


def ctrb(A, B):
    """Controllability matrix ``[B, AB, ..., A^{m-1} B]``."""
    A = _square(A, "A")
    B = as_matrix(B, "B")
    if B.shape[0] != A.shape[0]:
        raise DimensionError(f"B has {B.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def kalman_rank(A, B):
    """Numerical rank of the controllability matrix of ``(A, B)``.

    Singular values below ``max(m, m k) * sigma_max * 1e-12`` count as zero.
    """
    C = ctrb(A, B)
    m, k = np.shape(B)
    sv = np.linalg.svd(C, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    tol = max(m, m * k) * sv[0] * 1e-12
    return int(np.sum(sv > tol))


@dataclass(frozen=True)
class Gramian:
    """Controllability Gramian ``W = int_0^tau e^{-As} B B^T e^{-A^T s} ds``."""

    tau: float
    W: np.ndarray
    cond_estimate: float


def _gramian_van_loan(A, B, tau):
    # exp of [[A, BB^T], [0, -A^T]] tau carries e^{A^T tau} W in its top-right block
    m = A.shape[0]
    C = np.zeros((2 * m, 2 * m))
    C[:m, :m] = A
    C[:m, m:] = B @ B.T
    C[m:, m:] = -A.T
    E = expm(C, tau)
    return E[m:, m:].T @ E[:m, m:]


def _gramian_quadrature(A, B, tau):
    BBt = B @ B.T

    def integrand(s):
        Es = expm(-A, s)
        return Es @ BBt @ Es.T

    W, _ = quad_vec(integrand, 0.0, tau, epsabs=1e-300, epsrel=1e-13, norm="max", limit=400)
    return W


@lru_cache(maxsize=8192)
def _gramian_cached(a_bytes, m, b_bytes, k, tau):
    A = np.frombuffer(a_bytes).reshape(m, m)
    B = np.frombuffer(b_bytes).reshape(m, k)
    W1 = _gramian_van_loan(A, B, tau)
    W2 = _gramian_quadrature(A, B, tau)
    scale = max(np.max(np.abs(W1)), np.max(np.abs(W2)))
    diff = np.max(np.abs(W1 - W2))
    if diff > GRAMIAN_RTOL * scale:
        raise NumericalFailure(
            f"Gramian self-check failed at tau={tau:g}: block exponential and "
            f"quadrature differ by {diff:.3e} (scale {scale:.3e})"
        )
    W = 0.5 * (W1 + W1.T)
    W.setflags(write=False)
    sv = np.linalg.svd(W, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    return Gramian(tau=tau, W=W, cond_estimate=cond)


def gramian(A, B, tau):
    """Controllability Gramian over the fast-time window ``[0, tau]``.

    ``W`` is computed by the block (Van Loan) exponential and, as an
    independent check, by adaptive Gauss-Kronrod quadrature of the
    integrand; the two must agree to 1e-10 relative.

    Raises
    ------
    NumericalFailure
        If the two computations disagree.
    """
    A = _square(A, "A")
    B = as_matrix(B, "B")
    if B.shape[0] != A.shape[0]:
        raise DimensionError(f"B has {B.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
    tau = float(tau)
    if not tau > 0 or not np.isfinite(tau):
        raise DimensionError(f"tau must be positive and finite, got {tau}")
    A = np.ascontiguousarray(A)
    B = np.ascontiguousarray(B)
    return _gramian_cached(A.tobytes(), A.shape[0], B.tobytes(), B.shape[1], tau)
