"""Exception hierarchy shared by all avgctl modules."""


class AvgctlError(Exception):
    """Base class for every error raised by avgctl."""


class DimensionError(AvgctlError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class DomainError(AvgctlError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class SchemaError(AvgctlError, ValueError):
    """A scenario file or in-memory definition violates its schema."""


class RankError(AvgctlError):
    """The pair (A, B) fails the Kalman rank condition."""

    def __init__(self, rank, m):
        super().__init__(f"rank condition fails: rank {rank} < {m}")
        self.rank = rank
        self.m = m


class BoundViolation(AvgctlError):
    """A declared bound on g was falsified by sampling."""

    def __init__(self, quantity, observed, declared, witness):
        super().__init__(
            f"declared {quantity}={declared:g} violated: observed {observed:.6g} at {witness}"
        )
        self.quantity = quantity
        self.observed = observed
        self.declared = declared
        self.witness = witness


class EvaluationError(AvgctlError, ArithmeticError):
    """Expression evaluation failed (e.g. guarded division)."""


class NumericalFailure(AvgctlError, ArithmeticError):
    """A numerical self-check or iteration cap failed."""


class SteeringIllConditioned(NumericalFailure):
    """The controllability Gramian is too ill-conditioned to invert."""


class ScheduleInfeasible(AvgctlError):
    """The averaging tolerance is too large for some atom window."""
