"""Problem definition: fast linear system, slow dynamics g, scenario files.

A scenario is a JSON object (schema in :func:`scenario_from_dict`). Loading
validates everything that can be checked up front: the Kalman rank
condition on ``(A, B)`` and, by seeded Monte-Carlo sampling, the declared
bound ``M_g`` and Lipschitz constants ``L_y``, ``L_z`` of ``g``.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import expression
from .errors import BoundViolation, DimensionError, RankError, SchemaError
from .linops import as_matrix, kalman_rank

__all__ = [
    "Box",
    "FastSystem",
    "SlowDynamics",
    "ReferenceSpec",
    "Scenario",
    "ValidationReport",
    "eval_g",
    "validate_declared_bounds",
    "load_scenario",
    "scenario_from_dict",
]

# relative slack when comparing sampled difference quotients with declared constants
QUOTIENT_RTOL = 1e-6


@dataclass(frozen=True)
class Box:
    """Coordinate-wise closed box ``[lo, hi]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise SchemaError(f"box bounds must be equal-length vectors, got {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise SchemaError("box bounds must be finite")
        if np.any(lo > hi):
            raise SchemaError(f"degenerate box: lo {lo.tolist()} > hi {hi.tolist()}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    @property
    def width(self):
        return self.hi - self.lo

    def sample(self, rng, count):
        return self.lo + rng.random((count, self.dim)) * self.width

    def grid(self, per_axis):
        axes = [np.linspace(a, b, per_axis) for a, b in zip(self.lo, self.hi)]
        if not axes:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class FastSystem:
    """The fast subsystem ``epsilon dy/dt = A y + B u``, ``y(0) = y0``.

    Construction checks ``epsilon > 0``, shapes, and the rank condition.
    """

    epsilon: float
    A: np.ndarray
    B: np.ndarray
    y0: np.ndarray

    def __post_init__(self):
        eps = float(self.epsilon)
        if not (eps > 0 and math.isfinite(eps)):
            raise SchemaError("epsilon must be > 0")
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B must have {A.shape[0]} rows, got {B.shape}")
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        if y0.shape != (A.shape[0],):
            raise DimensionError(f"y0 must have length {A.shape[0]}, got {y0.shape}")
        rank = kalman_rank(A, B)
        if rank < A.shape[0]:
            raise RankError(rank, A.shape[0])
        for name, val in (("epsilon", eps), ("A", A), ("B", B), ("y0", y0)):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def k(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class SlowDynamics:
    """Expression-defined slow field ``g(u, y, z)`` with declared constants.

    ``M_g`` bounds ``||g||``; ``L_y`` and ``L_z`` are Lipschitz constants of
    ``g`` in ``y`` and in ``z``. The boxes confine sampling of the image of
    ``g`` (hull atoms and bound validation); steering controls are not
    confined to ``u_box``.
    """

    g_exprs: Tuple[str, ...]
    k: int
    m: int
    M_g: float
    L_z: float
    L_y: float
    u_box: Box
    y_box: Box
    trees: tuple = field(init=False, repr=False, compare=False)
    _vec: object = field(init=False, repr=False, compare=False)
    _pt: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        exprs = tuple(self.g_exprs)
        if not exprs:
            raise SchemaError("g must contain at least one expression")
        if not all(isinstance(s, str) for s in exprs):
            raise SchemaError("g must be a list of strings")
        object.__setattr__(self, "g_exprs", exprs)
        if not float(self.M_g) > 0:
            raise SchemaError("M_g must be > 0")
        if float(self.L_z) < 0 or float(self.L_y) < 0:
            raise SchemaError("L_z and L_y must be >= 0")
        if self.u_box.dim != self.k:
            raise SchemaError(f"u_box has dimension {self.u_box.dim}, expected k={self.k}")
        if self.y_box.dim != self.m:
            raise SchemaError(f"y_box has dimension {self.y_box.dim}, expected m={self.m}")
        dims = (self.k, self.m, len(exprs))
        trees = tuple(expression.parse_dynamics(s, dims) for s in exprs)
        object.__setattr__(self, "trees", trees)
        object.__setattr__(self, "_vec", expression.compile_vector(trees))
        object.__setattr__(self, "_pt", expression.compile_point(trees))

    @property
    def n(self):
        return len(self.g_exprs)

    def __call__(self, u, y, z):
        """Evaluate ``g`` at one point; returns a length-n array."""
        return np.array(self._pt(u, y, z))

    def point_fn(self):
        """Raw fast evaluator returning a list of floats (for integrator loops)."""
        return self._pt

    def batch(self, U, Y, Z):
        """Evaluate ``g`` on stacked points; leading axes broadcast."""
        return self._vec(U, Y, Z)

    def to_dict(self):
        return {
            "g": list(self.g_exprs),
            "M_g": self.M_g,
            "L_z": self.L_z,
            "L_y": self.L_y,
            "u_box": self.u_box.to_dict(),
            "y_box": self.y_box.to_dict(),
        }


def eval_g(slow, u, y, z):
    """Componentwise value of ``g(u, y, z)``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if u.shape != (slow.k,) or y.shape != (slow.m,) or z.shape != (slow.n,):
        raise DimensionError(
            f"expected u in R^{slow.k}, y in R^{slow.m}, z in R^{slow.n}; "
            f"got {u.shape}, {y.shape}, {z.shape}"
        )
    return slow(u, y, z)


@dataclass(frozen=True)
class ValidationReport:
    samples: int
    z_radius: float
    max_norm: float
    max_quotient_y: float
    max_quotient_z: float
    passed: bool
    violations: tuple = ()

    def to_dict(self):
        return {
            "samples": self.samples,
            "z_radius": self.z_radius,
            "max_norm": self.max_norm,
            "max_quotient_y": self.max_quotient_y,
            "max_quotient_z": self.max_quotient_z,
            "passed": self.passed,
            "violations": [str(v) for v in self.violations],
        }


def _ball(rng, count, n, radius):
    d = rng.normal(size=(count, n))
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
    r = radius * rng.random((count, 1)) ** (1.0 / n)
    return d * r


def _unit(rng, count, dim):
    d = rng.normal(size=(count, dim))
    return d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)


def _quotients(slow, U, Y, Z, which, rng):
    """Difference quotients of g in ``which`` ('y' or 'z') at close and far pairs."""
    base = {"y": Y, "z": Z}[which]
    count, dim = base.shape
    if dim == 0:
        return np.zeros(count), base
    scale = np.max(np.abs(base)) + 1.0
    # log-uniform step sizes from local (derivative-like) to global pairs
    h = scale * 10.0 ** rng.uniform(-6, 0, size=(count, 1))
    other = base + h * _unit(rng, count, dim)
    if which == "y":
        G0 = slow.batch(U, Y, Z)
        G1 = slow.batch(U, other, Z)
    else:
        G0 = slow.batch(U, Y, Z)
        G1 = slow.batch(U, Y, other)
    q = np.linalg.norm(G1 - G0, axis=1) / np.linalg.norm(other - base, axis=1)
    return q, other


def validate_declared_bounds(slow, samples=4000, seed=0, z0=None, T=1.0, raise_on_fail=True):
    """Try to falsify the declared ``M_g``, ``L_y``, ``L_z`` by sampling.

    Points are drawn from ``u_box x y_box x`` the z-ball of radius
    ``||z0|| + M_g T + 1`` (which contains every reachable z), together with
    a deterministic 5-per-axis grid of the boxes. Lipschitz constants are
    probed with difference quotients over pairs at log-uniform separations.

    Returns
    -------
    ValidationReport

    Raises
    ------
    BoundViolation
        When an observation exceeds a declared constant (and
        ``raise_on_fail``); the exception carries the witness point.
    """
    if samples < 1000:
        raise SchemaError("validate_declared_bounds needs samples >= 1000")
    rng = np.random.default_rng(seed)
    n = slow.n
    z0 = np.zeros(n) if z0 is None else np.atleast_1d(np.asarray(z0, dtype=float))
    radius = float(np.linalg.norm(z0) + slow.M_g * T + 1.0)

    grid_uy = slow.u_box.grid(5)
    grid_y = slow.y_box.grid(5)
    gu = np.repeat(grid_uy, len(grid_y), axis=0)
    gy = np.tile(grid_y, (len(grid_uy), 1))
    gz = np.tile(z0, (len(gu), 1))

    U = np.vstack([slow.u_box.sample(rng, samples), gu])
    Y = np.vstack([slow.y_box.sample(rng, samples), gy])
    Z = np.vstack([_ball(rng, samples, n, radius), gz])

    norms = np.linalg.norm(slow.batch(U, Y, Z), axis=1)
    qy, Yo = _quotients(slow, U, Y, Z, "y", rng)
    qz, Zo = _quotients(slow, U, Y, Z, "z", rng)

    violations = []

    def witness(i, **extra):
        w = {"u": U[i].tolist(), "y": Y[i].tolist(), "z": Z[i].tolist()}
        w.update({key: val[i].tolist() for key, val in extra.items()})
        return w

    i = int(np.argmax(norms))
    if norms[i] > slow.M_g * (1 + 1e-12):
        violations.append(BoundViolation("M_g", float(norms[i]), slow.M_g, witness(i)))
    i = int(np.argmax(qy))
    if qy[i] > slow.L_y * (1 + QUOTIENT_RTOL) + 1e-12:
        violations.append(BoundViolation("L_y", float(qy[i]), slow.L_y, witness(i, y_other=Yo)))
    i = int(np.argmax(qz))
    if qz[i] > slow.L_z * (1 + QUOTIENT_RTOL) + 1e-12:
        violations.append(BoundViolation("L_z", float(qz[i]), slow.L_z, witness(i, z_other=Zo)))

    report = ValidationReport(
        samples=len(U),
        z_radius=radius,
        max_norm=float(norms.max()),
        max_quotient_y=float(qy.max()),
        max_quotient_z=float(qz.max()),
        passed=not violations,
        violations=tuple(violations),
    )
    if violations and raise_on_fail:
        raise violations[0]
    return report


@dataclass(frozen=True)
class ReferenceSpec:
    """How the reference inclusion solution is given.

    ``kind`` is ``"constant_derivative"`` (``value``), ``"relaxed"``
    (``pieces``: dicts with ``t_end``, ``weights``, ``atoms_u``,
    ``atoms_y``) or ``"file"`` (``path`` to a CSV with header
    ``t,z_1..z_n``).
    """

    kind: str
    value: Optional[tuple] = None
    pieces: Optional[tuple] = None
    path: Optional[str] = None

    def to_dict(self):
        if self.kind == "constant_derivative":
            return {"type": self.kind, "value": list(self.value)}
        if self.kind == "relaxed":
            return {"type": self.kind, "pieces": [dict(p) for p in self.pieces]}
        return {"type": self.kind, "path": self.path}


@dataclass(frozen=True)
class Scenario:
    fast: FastSystem
    slow: SlowDynamics
    z0: np.ndarray
    T: float
    S: float
    delta: object  # float or "auto"
    atoms_per_axis: int
    seed: int
    reference: ReferenceSpec
    objective: Optional[str] = None
    h_fast: Optional[float] = None
    tau_min: float = 1e-7
    validation_samples: int = 4000
    source: Optional[str] = None

    @property
    def epsilon(self):
        return self.fast.epsilon

    @property
    def eps_S(self):
        return self.fast.epsilon * self.S

    def fast_step(self, S=None):
        """RK4 step in fast time (default ``S / 200``)."""
        S = self.S if S is None else S
        return self.h_fast if self.h_fast is not None else S / 200.0

    def to_dict(self):
        """Inverse of :func:`scenario_from_dict` (file references stay as given)."""
        d = {
            "epsilon": self.fast.epsilon,
            "A": self.fast.A.tolist(),
            "B": self.fast.B.tolist(),
            "y0": self.fast.y0.tolist(),
            "z0": self.z0.tolist(),
            "T": self.T,
            "S": self.S,
            "delta": self.delta,
            "atoms_per_axis": self.atoms_per_axis,
            "seed": self.seed,
            "reference": self.reference.to_dict(),
            "tolerances": {"tau_min": self.tau_min, "validation_samples": self.validation_samples},
        }
        d.update(self.slow.to_dict())
        if self.objective is not None:
            d["objective"] = self.objective
        if self.h_fast is not None:
            d["tolerances"]["h_fast"] = self.h_fast
        return d

    def replace(self, **changes):
        """Copy with some fields changed."""
        from dataclasses import replace as _replace

        return _replace(self, **changes)


REQUIRED_KEYS = {
    "epsilon", "A", "B", "y0", "z0", "T", "S", "delta", "g", "M_g", "L_z", "L_y",
    "u_box", "y_box", "atoms_per_axis", "seed", "reference",
}
OPTIONAL_KEYS = {"objective", "tolerances"}
TOLERANCE_KEYS = {"h_fast", "tau_min", "validation_samples"}


def _number(data, key, positive=False, nonneg=False):
    val = data[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise SchemaError(f"{key} must be a finite number")
    if positive and not val > 0:
        raise SchemaError(f"{key} must be > 0")
    if nonneg and val < 0:
        raise SchemaError(f"{key} must be >= 0")
    return float(val)


def _vector(data, key, length=None):
    val = data[key]
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"{key} must be an array of numbers") from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise SchemaError(f"{key} must be a flat array of finite numbers")
    if length is not None and arr.size != length:
        raise SchemaError(f"{key} must have length {length}, got {arr.size}")
    return arr


def _matrix(data, key):
    try:
        arr = np.asarray(data[key], dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"{key} must be a nested row-major array") from None
    if arr.ndim != 2 or arr.size == 0:
        raise SchemaError(f"{key} must be a nonempty 2-D nested array")
    return arr


def _box(data, key, dim):
    val = data[key]
    if not isinstance(val, dict) or set(val) != {"lo", "hi"}:
        raise SchemaError(f'{key} must be an object with keys "lo" and "hi"')
    return Box(_vector(val, "lo", dim), _vector(val, "hi", dim))


def _reference(data, k, m, n, T, base_dir):
    ref = data["reference"]
    if not isinstance(ref, dict) or "type" not in ref:
        raise SchemaError('reference must be an object with a "type" key')
    kind = ref["type"]
    if kind == "constant_derivative":
        if set(ref) != {"type", "value"}:
            raise SchemaError("constant_derivative reference takes exactly: type, value")
        return ReferenceSpec(kind, value=tuple(_vector(ref, "value", n).tolist()))
    if kind == "relaxed":
        if set(ref) != {"type", "pieces"}:
            raise SchemaError("relaxed reference takes exactly: type, pieces")
        pieces = ref["pieces"]
        if not isinstance(pieces, list) or not pieces:
            raise SchemaError("relaxed reference needs a nonempty pieces list")
        out = []
        last = 0.0
        for i, piece in enumerate(pieces):
            if not isinstance(piece, dict) or set(piece) != {"t_end", "weights", "atoms_u", "atoms_y"}:
                raise SchemaError(f"piece {i} must have keys t_end, weights, atoms_u, atoms_y")
            t_end = _number(piece, "t_end", positive=True)
            if t_end <= last:
                raise SchemaError(f"piece {i}: t_end must be strictly increasing")
            last = t_end
            w = _vector(piece, "weights")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise SchemaError(f"piece {i}: weights must lie on the simplex")
            au = np.asarray(piece["atoms_u"], dtype=float).reshape(len(w), -1) if k else np.zeros((len(w), 0))
            ay = np.asarray(piece["atoms_y"], dtype=float)
            if au.shape != (len(w), k) or ay.shape != (len(w), m):
                raise SchemaError(f"piece {i}: atoms_u must be {len(w)}x{k} and atoms_y {len(w)}x{m}")
            out.append({"t_end": t_end, "weights": w.tolist(), "atoms_u": au.tolist(), "atoms_y": ay.tolist()})
        if abs(last - T) > 1e-12 * max(1.0, T):
            raise SchemaError(f"relaxed reference must end at T={T}, ends at {last}")
        return ReferenceSpec(kind, pieces=tuple(out))
    if kind == "file":
        if set(ref) != {"type", "path"} or not isinstance(ref["path"], str):
            raise SchemaError("file reference takes exactly: type, path (string)")
        path = Path(ref["path"])
        if not path.is_absolute() and base_dir is not None:
            path = Path(base_dir) / path
        if not path.is_file():
            raise SchemaError(f"reference file not found: {path}")
        return ReferenceSpec(kind, path=str(path))
    raise SchemaError(f"unknown reference type {kind!r}")


def scenario_from_dict(data, base_dir=None, validate=True):
    """Build a validated :class:`Scenario` from a parsed JSON object.

    Keys: ``epsilon``, ``A``, ``B`` (nested row-major arrays), ``y0``,
    ``z0``, ``T``, ``S``, ``delta`` (number or ``"auto"``), ``g`` (list of
    n strings), ``M_g``, ``L_z``, ``L_y``, ``u_box``/``y_box``
    (``{"lo": [...], "hi": [...]}``), ``atoms_per_axis`` (>= 2), ``seed``,
    ``reference``, optional ``objective`` (expression in z) and optional
    ``tolerances`` (``h_fast``, ``tau_min``, ``validation_samples``).
    Unknown keys are rejected.
    """
    if not isinstance(data, dict):
        raise SchemaError("scenario must be a JSON object")
    unknown = set(data) - REQUIRED_KEYS - OPTIONAL_KEYS
    if unknown:
        raise SchemaError(f"unknown keys: {sorted(unknown)}")
    missing = REQUIRED_KEYS - set(data)
    if missing:
        raise SchemaError(f"missing keys: {sorted(missing)}")

    eps = _number(data, "epsilon")
    if not eps > 0:
        raise SchemaError("epsilon must be > 0")
    A = _matrix(data, "A")
    B = _matrix(data, "B")
    m, k = B.shape
    if A.shape != (m, m):
        raise SchemaError(f"A must be {m}x{m} to match B, got {A.shape[0]}x{A.shape[1]}")
    y0 = _vector(data, "y0", m)
    fast = FastSystem(eps, A, B, y0)

    g = data["g"]
    if not isinstance(g, list) or not g or not all(isinstance(s, str) for s in g):
        raise SchemaError("g must be a nonempty array of strings")
    n = len(g)
    z0 = _vector(data, "z0", n)
    slow = SlowDynamics(
        tuple(g),
        k=k,
        m=m,
        M_g=_number(data, "M_g", positive=True),
        L_z=_number(data, "L_z", nonneg=True),
        L_y=_number(data, "L_y", nonneg=True),
        u_box=_box(data, "u_box", k),
        y_box=_box(data, "y_box", m),
    )

    T = _number(data, "T", positive=True)
    S = _number(data, "S", positive=True)
    if S > T / eps * (1 + 1e-12):
        raise SchemaError(f"S must satisfy 0 < S <= T/epsilon = {T / eps:g}, got {S:g}")
    delta = data["delta"]
    if delta != "auto":
        delta = _number(data, "delta", positive=True)
    apa = data["atoms_per_axis"]
    if isinstance(apa, bool) or not isinstance(apa, int) or apa < 2:
        raise SchemaError("atoms_per_axis must be an integer >= 2")
    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise SchemaError("seed must be an integer")
    reference = _reference(data, k, m, n, T, base_dir)

    objective = data.get("objective")
    if objective is not None:
        if not isinstance(objective, str):
            raise SchemaError("objective must be a string")
        expression.parse_dynamics(objective, (0, 0, n))

    tol = data.get("tolerances", {})
    if not isinstance(tol, dict) or set(tol) - TOLERANCE_KEYS:
        raise SchemaError(f"tolerances may only contain {sorted(TOLERANCE_KEYS)}")
    h_fast = _number(tol, "h_fast", positive=True) if "h_fast" in tol else None
    tau_min = _number(tol, "tau_min", positive=True) if "tau_min" in tol else 1e-7
    samples = tol.get("validation_samples", 4000)
    if isinstance(samples, bool) or not isinstance(samples, int) or samples < 1000:
        raise SchemaError("validation_samples must be an integer >= 1000")

    if validate:
        validate_declared_bounds(slow, samples=samples, seed=seed, z0=z0, T=T)

    return Scenario(
        fast=fast,
        slow=slow,
        z0=z0,
        T=T,
        S=S,
        delta=delta,
        atoms_per_axis=apa,
        seed=seed,
        reference=reference,
        objective=objective,
        h_fast=h_fast,
        tau_min=tau_min,
        validation_samples=samples,
        source=None,
    )


def load_scenario(path, validate=True):
    """Read, parse and fully validate a scenario JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read scenario file {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON in {path}: {exc}") from exc
    scenario = scenario_from_dict(data, base_dir=path.parent, validate=validate)
    return scenario.replace(source=str(path))
