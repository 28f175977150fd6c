"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`ParafitError`, so
callers (the CLI, the HTTP service, the bindings) can map failures to exit
codes or typed client-side exceptions by class name.
"""

from __future__ import annotations


class ParafitError(Exception):
    """Base class for all library errors."""


# --- variables / datasets ----------------------------------------------------

class OutOfBounds(ParafitError):
    """A parameter value violates its [lower, upper] bounds."""


class OutOfRange(ParafitError):
    """An event value lies outside its observable's valid range."""

    def __init__(self, index: int, value: float, name: str = ""):
        self.index = index
        self.value = value
        self.name = name
        where = f" for observable '{name}'" if name else ""
        super().__init__(f"value {value!r} at column {index}{where} is out of range")


class ShapeMismatch(ParafitError):
    """A row or column has the wrong length."""


class UnknownObservable(ParafitError):
    """The requested observable is not part of the dataset."""


class IndexOutOfRange(ParafitError):
    """A bin or element index is outside the valid range."""


class DuplicateName(ParafitError):
    """A variable name is already registered."""


class DataError(ParafitError):
    """A data file could not be read or parsed."""


# --- densities ----------------------------------------------------------------

class NonFiniteDensity(ParafitError):
    """A density kernel evaluated to NaN or infinity."""

    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"non-finite density at event {index}")


class NegativeDensity(ParafitError):
    """A polynomial density evaluated to a negative value."""

    def __init__(self, index: int, value: float = float("nan")):
        self.index = index
        self.value = value
        super().__init__(f"negative density {value!r} at index {index}")


class NonPositiveNorm(ParafitError):
    """A normalization integral came out zero, negative, or non-finite."""


class UnboundedObservable(ParafitError):
    """A numeric normalization was requested over an infinite range."""


class FractionOutOfRange(ParafitError):
    """Sum-node fractions must each lie in [0, 1] and sum to at most 1."""


class OverlappingObservables(ParafitError):
    """Product-node children must act on disjoint observables."""


# --- evaluation / reduction -----------------------------------------------------

class NonPositiveDensity(ParafitError):
    """An event's normalized density was zero or negative inside an NLL sum."""

    def __init__(self, index: int, value: float = float("nan")):
        self.index = index
        self.value = value
        super().__init__(f"density {value!r} <= 0 at event {index}")


class EmptyDataSet(ParafitError):
    """The dataset holds no events."""


class NonPositiveExpectation(ParafitError):
    """A binned expectation was <= 0 in a bin with observed content."""

    def __init__(self, bin_index: int, value: float = float("nan")):
        self.bin_index = bin_index
        self.value = value
        super().__init__(f"expectation {value!r} <= 0 in bin {bin_index}")


class DegenerateGrid(ParafitError):
    """An integration grid is too coarse to be meaningful."""


# --- fitting --------------------------------------------------------------------

class NoFreeParameters(ParafitError):
    """All parameters are fixed; nothing to minimize."""


class MaxCallsExceeded(ParafitError):
    """The objective call budget ran out before convergence."""


class SingularHessianApprox(ParafitError):
    """The quasi-Newton curvature approximation collapsed twice."""


class NonFiniteObjective(ParafitError):
    """The objective returned NaN or infinity where a finite value is required."""


class NonPositiveDefinite(ParafitError):
    """The numeric Hessian is not positive definite at the minimum."""

    def __init__(self, eigenvalues):
        self.eigenvalues = list(eigenvalues)
        super().__init__(f"Hessian not positive definite; eigenvalues {self.eigenvalues}")


# --- generation -------------------------------------------------------------------

class EnvelopeExceeded(ParafitError):
    """A density value rose above the accept-reject envelope even after a rescan."""


class AttemptsExhausted(ParafitError):
    """Accept-reject ran out of attempts before producing enough events."""


# --- distributed --------------------------------------------------------------------

class MissingShard(ParafitError):
    """A shard index is absent from a reduction."""


class DuplicateShard(ParafitError):
    """A shard index appears more than once in a reduction."""


class ProtocolError(ParafitError):
    """A wire frame was malformed or truncated."""
