"""Jackson network models: validation, traffic equations, generator rows.

A network has d single-server stations with Poisson arrivals ``lam[i]``,
exponential services ``mu[i]`` and Markovian routing ``routing[i][j]``
(probability that a customer finishing at i moves to j; the residual
``exit[i] = 1 - sum_j routing[i][j]`` leaves the system).  The queue-length
vector is a continuous-time Markov chain on the nonnegative integer lattice
whose jump rates from a state x are

* ``lam[i]`` onto ``x + e_i`` (always),
* ``mu[i] * exit[i]`` onto ``x - e_i`` (only when ``x[i] > 0``),
* ``mu[i] * routing[i][j]`` onto ``x - e_i + e_j`` (only when ``x[i] > 0``).

Stations are indexed from 0 throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DiagonalNonzero,
    NegativeCoordinate,
    NegativeRate,
    RoutingSpectralRadiusGEOne,
    RowSumExceedsOne,
    SingularSystem,
    UnreachableStation,
)

#: relative tolerance for deciding a traffic tie nu_i == mu_i
TIE_RTOL = 1e-9

#: iteration tolerance for the routing spectral-radius bounds
_RADIUS_TOL = 1e-10
# Defective (nilpotent-block) routing makes the bounds contract like 1/k;
# the cap trades value precision there for bounded validation time.
_RADIUS_MAXIT = 20_000


class Classification(enum.Enum):
    ERGODIC = "Ergodic"
    RECURRENT_NON_ERGODIC = "RecurrentNonErgodic"
    TRANSIENT = "Transient"


@dataclass(frozen=True)
class Network:
    """A validated d-station network.

    Construct through :func:`validate` (checked) or :meth:`from_rates`
    (unchecked, for degenerate test models such as pure-death chains).
    Instances are immutable; all arrays are frozen.
    """

    lam: np.ndarray
    mu: np.ndarray
    routing: np.ndarray
    exit: np.ndarray
    routing_radius: float

    @property
    def d(self) -> int:
        return self.lam.shape[0]

    @property
    def total_rate_bound(self) -> float:
        """Upper bound on the total exit rate of any state: sum(lam) + sum(mu)."""
        return float(self.lam.sum() + self.mu.sum())

    @classmethod
    def from_rates(cls, lam, mu, routing, *, routing_radius: float | None = None) -> "Network":
        """Build without validation.  The exit vector and a spectral-radius
        estimate are still derived; invariants are the caller's problem."""
        lam = np.asarray(lam, dtype=float).copy()
        mu = np.asarray(mu, dtype=float).copy()
        routing = np.asarray(routing, dtype=float).copy()
        if routing.ndim != 2:
            routing = routing.reshape(len(lam), len(lam))
        exit_probs = 1.0 - routing.sum(axis=1)
        if routing_radius is None:
            lo, hi = _routing_radius_bounds(routing)
            routing_radius = 0.5 * (lo + hi)
        net = cls(lam, mu, routing, exit_probs, routing_radius)
        for arr in (net.lam, net.mu, net.routing, net.exit):
            arr.setflags(write=False)
        return net


def _routing_radius_bounds(p: np.ndarray) -> tuple[float, float]:
    """Certified lower/upper bounds on the spectral radius of a nonnegative
    matrix, by power iteration on the half-shifted matrix (I + P)/2.

    The shift makes the iteration aperiodic, so the Collatz-Wielandt ratios
    min_i (Bx)_i/x_i <= rho(B) <= max_i (Bx)_i/x_i contract; they are valid
    bounds at every iterate even when P is reducible, where plain power
    iteration need not converge.
    """
    d = p.shape[0]
    b = 0.5 * (p + np.eye(d))
    x = np.ones(d)
    lo, hi = 0.0, float(np.inf)
    for _ in range(_RADIUS_MAXIT):
        y = b @ x
        ratios = y / x
        lo = max(lo, float(ratios.min()))
        hi = min(hi, float(ratios.max()))
        if hi - lo <= 0.5 * _RADIUS_TOL:
            break
        x = y / y.max()
    # rho(P) = 2 rho(B) - 1
    return 2.0 * lo - 1.0, 2.0 * hi - 1.0


def validate(lam, mu, routing) -> Network:
    """Check a raw description and return a :class:`Network`.

    Raises one of :class:`NegativeRate`, :class:`RowSumExceedsOne`,
    :class:`DiagonalNonzero`, :class:`RoutingSpectralRadiusGEOne`,
    :class:`UnreachableStation` with the offending index in the message.
    """
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    routing = np.asarray(routing, dtype=float)
    d = lam.shape[0]
    if mu.shape != (d,) or routing.shape != (d, d):
        raise NegativeRate(
            f"shape mismatch: lam {lam.shape}, mu {mu.shape}, routing {routing.shape}"
        )
    if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(mu)) or not np.all(
        np.isfinite(routing)
    ):
        raise NegativeRate("rates must be finite")
    for i in range(d):
        if lam[i] < 0:
            raise NegativeRate(f"lam[{i}] = {lam[i]} < 0")
        if mu[i] <= 0:
            raise NegativeRate(f"mu[{i}] = {mu[i]} must be > 0")
        if routing[i, i] != 0:
            raise DiagonalNonzero(f"routing[{i}][{i}] = {routing[i, i]} != 0")
        for j in range(d):
            if routing[i, j] < 0:
                raise NegativeRate(f"routing[{i}][{j}] = {routing[i, j]} < 0")
        row = routing[i].sum()
        if row > 1.0 + 1e-12:
            raise RowSumExceedsOne(f"row {i} sums to {row} > 1")

    lo, hi = _routing_radius_bounds(routing)
    if lo >= 1.0 - _RADIUS_TOL:
        raise RoutingSpectralRadiusGEOne(
            f"routing spectral radius >= {lo:.12f}"
        )
    if hi >= 1.0 - _RADIUS_TOL:
        # bounds did not separate from 1 within the iteration budget
        raise RoutingSpectralRadiusGEOne(
            f"routing spectral radius in [{lo:.12f}, {hi:.12f}], not certified < 1"
        )

    # a station is fed iff it is reachable in the routing graph from some
    # station with a positive exogenous arrival rate
    reached = set(i for i in range(d) if lam[i] > 0)
    frontier = list(reached)
    while frontier:
        j = frontier.pop()
        for i in range(d):
            if i not in reached and routing[j, i] > 0:
                reached.add(i)
                frontier.append(i)
    for i in range(d):
        if i not in reached:
            raise UnreachableStation(f"station {i} receives no traffic")

    return Network.from_rates(lam, mu, routing, routing_radius=0.5 * (lo + hi))


@dataclass(frozen=True)
class TrafficSolution:
    """Solution of the traffic equations nu = lam + nu @ routing."""

    nu: np.ndarray
    classification: Classification
    slack: np.ndarray            # mu - nu
    boundary: bool               # some nu_i == mu_i within tolerance
    residual: float              # relative residual of the linear solve

    def __post_init__(self):
        self.nu.setflags(write=False)
        self.slack.setflags(write=False)


def solve_traffic(net: Network) -> TrafficSolution:
    """Solve the traffic equations and classify recurrence.

    The throughput vector solves the linear system (I - P^T) nu = lam.  The
    network is ergodic iff nu < mu componentwise, recurrent (but not ergodic)
    iff nu <= mu with equality somewhere, and transient otherwise.  Equality
    is decided with relative tolerance ``TIE_RTOL``.
    """
    d = net.d
    a = np.eye(d) - net.routing.T
    try:
        nu = np.linalg.solve(a, net.lam)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    resid_vec = nu - net.lam - net.routing.T @ nu
    denom = max(float(np.abs(nu).max()), 1e-300)
    residual = float(np.abs(resid_vec).max()) / denom

    slack = net.mu - nu
    tie = np.abs(slack) <= TIE_RTOL * np.maximum(1.0, np.maximum(net.mu, np.abs(nu)))
    over = (nu > net.mu) & ~tie
    if over.any():
        cls = Classification.TRANSIENT
    elif tie.any():
        cls = Classification.RECURRENT_NON_ERGODIC
    else:
        cls = Classification.ERGODIC
    return TrafficSolution(nu, cls, slack, bool(tie.any()), residual)


@dataclass(frozen=True)
class Transition:
    """One jump out of a state: lattice offset and its rate."""

    offset: tuple[int, ...]
    rate: float


def generator_row(net: Network, state) -> list[Transition]:
    """Jump transitions out of ``state``.

    Arrivals are always present; service moves are emitted only at stations
    with a positive queue, which keeps the chain on the nonnegative lattice.
    The total rate equals sum(lam) + sum of mu over busy stations.
    """
    x = np.asarray(state)
    if x.shape != (net.d,):
        raise NegativeCoordinate(f"state has shape {x.shape}, expected ({net.d},)")
    if np.any(x < 0):
        raise NegativeCoordinate(f"state {tuple(int(v) for v in x)} has a negative coordinate")
    d = net.d
    out: list[Transition] = []
    for i in range(d):
        if net.lam[i] > 0:
            off = [0] * d
            off[i] = 1
            out.append(Transition(tuple(off), float(net.lam[i])))
    for i in range(d):
        if x[i] <= 0:
            continue
        if net.exit[i] > 0:
            off = [0] * d
            off[i] = -1
            out.append(Transition(tuple(off), float(net.mu[i] * net.exit[i])))
        for j in range(d):
            if j != i and net.routing[i, j] > 0:
                off = [0] * d
                off[i] = -1
                off[j] = 1
                out.append(Transition(tuple(off), float(net.mu[i] * net.routing[i, j])))
    return out


def total_exit_rate(net: Network, state) -> float:
    """Total outflow rate at ``state`` (conservativeness reference value)."""
    x = np.asarray(state)
    return float(net.lam.sum() + net.mu[x > 0].sum())
