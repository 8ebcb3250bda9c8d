"""Exception hierarchy for netdecay.

Every rejection carries enough context (station index, row, offending value)
to be actionable from the CLI without a traceback.
"""


class NetdecayError(Exception):
    """Base class for all netdecay errors."""


# --- network validation ---------------------------------------------------

class NegativeRate(NetdecayError):
    """An arrival or service rate is negative (or a service rate is zero)."""


class RowSumExceedsOne(NetdecayError):
    """A routing-matrix row sums to more than one."""


class DiagonalNonzero(NetdecayError):
    """A routing-matrix diagonal entry is nonzero (self-routing is not allowed)."""


class RoutingSpectralRadiusGEOne(NetdecayError):
    """The routing matrix has spectral radius >= 1, so traffic cannot drain."""


class UnreachableStation(NetdecayError):
    """A station receives no traffic from any exogenous arrival stream."""


class SingularSystem(NetdecayError):
    """The traffic linear system is singular; validation was bypassed."""


class NegativeCoordinate(NetdecayError):
    """A queue-length vector has a negative coordinate."""


# --- rate-function evaluation ----------------------------------------------

class Overflow(NetdecayError):
    """A dual variable exceeds the exponential-overflow cap."""


class Unbounded(NetdecayError):
    """A conjugate maximization pushed against the dual cap; the velocity is
    outside the numerically tractable domain and the value is reported +inf."""


class DimensionUnsupported(NetdecayError):
    """No closed form exists at this dimension; use the variational bound
    from the path optimizer instead."""


class NotErgodic(NetdecayError):
    """The operation requires an ergodic network."""


# --- path optimization -----------------------------------------------------

class FaceMismatch(NetdecayError):
    """A segment's stored face label disagrees with its interior; the loop
    was not preprocessed."""


class NoFeasibleSeed(NetdecayError):
    """No seed loop satisfies the optimizer constraints."""


# --- truncated spectral oracle ----------------------------------------------

class StateSpaceTooLarge(NetdecayError):
    """The truncated state space exceeds the configured memory budget."""


# --- cluster machinery -------------------------------------------------------

class CoverTooLarge(NetdecayError):
    """The ball cover would exceed the configured pair cap; reduce N or
    increase the radius."""


class PreconditionViolated(NetdecayError):
    """A sampled path violates a construction precondition (norm floor or
    endpoint bound)."""


class NoCoveringPair(NetdecayError):
    """No cover pair contains the scaled segment endpoints."""


class EnumerationTooLarge(NetdecayError):
    """Exact cluster enumeration is only feasible at small horizons."""


# --- Monte Carlo --------------------------------------------------------------

class WindowEmpty(NetdecayError):
    """The survival curve has no usable fitting window; enlarge the horizon
    or the trajectory count."""


class HypothesisViolated(NetdecayError):
    """The certificate inputs fail the dual-region or ordering hypotheses."""


# --- configuration -------------------------------------------------------------

class ConfigError(NetdecayError):
    """A run configuration file is malformed."""
