"""Sampled convex hull of the image of g, projection onto it, Caratheodory.

``V(z)``, the closed convex hull of ``{g(u, y, z)}``, is represented by a
finite set of atoms ``g(u_i, y_i, z)`` over a grid plus seeded random
points of ``u_box x y_box``. The witness pairs ``(u_i, y_i)`` are kept so a
hull can be re-evaluated at another ``z`` with the same witnesses.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalFailure

__all__ = [
    "VPolytope",
    "ConvexCombination",
    "sample_atoms",
    "rebuild",
    "project",
    "min_norm_point",
    "caratheodory_reduce",
    "hull_hausdorff",
]

GAP_TOL = 1e-10
DEDUP_TOL = 1e-12


@dataclass(frozen=True)
class VPolytope:
    """Atoms ``G[i] = g(U[i], Y[i], z_anchor)`` of a sampled hull."""

    z_anchor: np.ndarray
    U: np.ndarray  # (N, k)
    Y: np.ndarray  # (N, m)
    G: np.ndarray  # (N, n)
    source: dict

    @property
    def n(self):
        return self.G.shape[1]

    def __len__(self):
        return self.G.shape[0]


@dataclass(frozen=True)
class ConvexCombination:
    indices: np.ndarray
    weights: np.ndarray

    def point(self, G):
        return self.weights @ G[self.indices]

    def __len__(self):
        return self.indices.size


def _dedup(G, order):
    """Indices (in ``order`` priority) of atoms whose g-values are pairwise > DEDUP_TOL apart."""
    keep = []
    for i in order:
        if keep:
            d = np.max(np.abs(G[keep] - G[i]), axis=1)
            if np.any(d <= DEDUP_TOL):
                continue
        keep.append(i)
    return np.sort(np.array(keep, dtype=int))


def sample_atoms(slow, z, atoms_per_axis, seed):
    """Atoms of the sampled hull at ``z``.

    A regular grid with ``atoms_per_axis`` points per coordinate of
    ``u_box x y_box`` is joined with an equal number of seeded uniform
    points. Atoms whose g-values coincide within 1e-12 are merged, keeping
    the witness with the smallest ``||(u, y)||`` (cheapest to steer to and
    hold).
    """
    if int(atoms_per_axis) < 2:
        raise DimensionError("atoms_per_axis must be >= 2")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    k, m = slow.k, slow.m
    axes = [np.linspace(a, b, atoms_per_axis) for a, b in zip(
        np.concatenate([slow.u_box.lo, slow.y_box.lo]), np.concatenate([slow.u_box.hi, slow.y_box.hi])
    )]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([g.ravel() for g in mesh], axis=-1)
    rng = np.random.default_rng(seed)
    rand = np.hstack([slow.u_box.sample(rng, len(grid)), slow.y_box.sample(rng, len(grid))])
    UY = np.vstack([grid, rand])
    U, Y = UY[:, :k], UY[:, k:]
    G = slow.batch(U, Y, np.broadcast_to(z, (len(UY), z.size)))
    order = np.argsort(np.linalg.norm(UY, axis=1), kind="stable")
    keep = _dedup(G, order)
    source = {"atoms_per_axis": int(atoms_per_axis), "seed": int(seed), "candidates": len(UY)}
    return VPolytope(z.copy(), U[keep].copy(), Y[keep].copy(), G[keep].copy(), source)


def rebuild(slow, P, z):
    """Same witnesses as ``P``, atoms re-evaluated at ``z``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    G = slow.batch(P.U, P.Y, np.broadcast_to(z, (len(P), z.size)))
    return VPolytope(z.copy(), P.U, P.Y, G, P.source)


def _affine_min(Q):
    """Weights ``alpha`` (sum 1) minimising ``||alpha @ Q||`` over the affine hull of rows of Q."""
    s = Q.shape[0]
    if s == 1:
        return np.ones(1)
    K = np.zeros((s + 1, s + 1))
    K[:s, :s] = Q @ Q.T
    K[:s, s] = 1.0
    K[s, :s] = 1.0
    rhs = np.zeros(s + 1)
    rhs[s] = 1.0
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:s]


def min_norm_point(Q, tol=GAP_TOL, max_iter=None):
    """Wolfe's minimum-norm-point algorithm on the rows of ``Q``.

    Maintains an affinely independent active set ("corral") and, after each
    new atom enters, fully re-optimises over the set's affine hull, dropping
    atoms whose weights would turn negative. Stops when the Frank-Wolfe gap
    ``||x||^2 - min_i <x, q_i>`` is at most ``tol`` times the squared scale of
    the cloud.

    Returns
    -------
    x : ndarray
        Minimum-norm point of ``conv(Q)``.
    indices, weights : ndarray
        Active atoms and their (positive) weights, ``x = weights @ Q[indices]``.
    """
    N, n = Q.shape
    if max_iter is None:
        max_iter = 10 * (n + 2) * N
    scale = max(1.0, float(np.max(np.sum(Q * Q, axis=1))))
    active = [int(np.argmin(np.sum(Q * Q, axis=1)))]
    lam = np.ones(1)
    x = Q[active[0]].copy()
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise NumericalFailure(f"min-norm-point iteration cap {max_iter} exceeded")
        dots = Q @ x
        j = int(np.argmin(dots))
        if x @ x - dots[j] <= tol * scale or j in active:
            break
        active.append(j)
        lam = np.append(lam, 0.0)
        while True:
            it += 1
            if it > max_iter:
                raise NumericalFailure(f"min-norm-point iteration cap {max_iter} exceeded")
            alpha = _affine_min(Q[active])
            if np.all(alpha > 1e-15):
                lam = alpha
                break
            neg = alpha <= 1e-15
            ratios = lam[neg] / (lam[neg] - alpha[neg])
            theta = float(np.min(ratios))
            lam = lam + theta * (alpha - lam)
            drop = np.flatnonzero(lam <= 1e-15)
            if drop.size == 0:
                drop = np.array([int(np.flatnonzero(neg)[np.argmin(ratios)])])
            active = [a for i, a in enumerate(active) if i not in set(drop.tolist())]
            lam = np.delete(lam, drop)
            lam = lam / lam.sum()
        x = lam @ Q[active]
    idx = np.array(active, dtype=int)
    order = np.argsort(idx)
    return x, idx[order], lam[order]


def project(w, P):
    """Euclidean projection of ``w`` onto the convex hull of ``P``'s atoms.

    Returns
    -------
    v : ndarray
        The projection.
    combination : ConvexCombination
        Affinely independent support (at most n + 1 atoms) with positive
        weights realising ``v``.
    dist : float
        ``||w - v||``.
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if len(P) == 0:
        raise DimensionError("cannot project onto an empty polytope")
    if w.shape != (P.n,):
        raise DimensionError(f"w must lie in R^{P.n}")
    _, idx, lam = min_norm_point(P.G - w)
    v = lam @ P.G[idx]
    return v, ConvexCombination(idx, lam), float(np.linalg.norm(w - v))


def caratheodory_reduce(c, G):
    """Reduce a convex combination of rows of ``G`` to at most ``n + 1`` atoms.

    Repeatedly finds an affine dependence ``mu`` (``sum mu = 0``,
    ``sum mu_i g_i = 0``) among the support and moves the weights along it
    until one vanishes; the barycenter is unchanged.
    """
    G = np.asarray(G, dtype=float)
    n = G.shape[1]
    idx = np.asarray(c.indices, dtype=int)
    lam = np.asarray(c.weights, dtype=float).copy()
    pos = lam > 0
    idx, lam = idx[pos], lam[pos]
    while idx.size > n + 1:
        M = np.vstack([G[idx].T, np.ones(idx.size)])
        mu = np.linalg.svd(M)[2][-1]
        if not np.any(mu > 0):
            mu = -mu
        ratios = np.full(idx.size, np.inf)
        ratios[mu > 0] = lam[mu > 0] / mu[mu > 0]
        r = int(np.argmin(ratios))
        lam = lam - ratios[r] * mu
        lam[r] = 0.0
        keep = lam > 1e-15
        idx, lam = idx[keep], lam[keep]
        lam = np.clip(lam, 0.0, None)
        lam = lam / lam.sum()
    return ConvexCombination(idx, lam)


def _support(G, D):
    return np.max(G @ D.T, axis=0)


def hull_hausdorff(P1, P2, probe_count=64, seed=0):
    """Hausdorff distance between the convex hulls of two atom sets.

    Distance from a point to a convex set is convex, so the directed
    distance ``sup_{x in co P1} d(x, co P2)`` is attained at an atom of P1;
    the atom projections therefore give the distance exactly (up to the
    projection tolerance). Support-function gaps along random directions are
    a cheap lower bound that is folded in as a cross-check.
    """
    G1 = np.asarray(P1.G if isinstance(P1, VPolytope) else P1, dtype=float)
    G2 = np.asarray(P2.G if isinstance(P2, VPolytope) else P2, dtype=float)
    if G1.shape[1] != G2.shape[1]:
        raise DimensionError("hulls live in different dimensions")
    n = G1.shape[1]
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(probe_count, n))
    D = np.vstack([D / np.linalg.norm(D, axis=1, keepdims=True), np.eye(n), -np.eye(n)])
    gap = float(np.max(np.abs(_support(G1, D) - _support(G2, D))))

    def directed(A, B):
        best = 0.0
        for a in A:
            x, _, _ = min_norm_point(B - a)
            best = max(best, float(np.linalg.norm(x)))
        return best

    return max(gap, directed(G1, G2), directed(G2, G1))
