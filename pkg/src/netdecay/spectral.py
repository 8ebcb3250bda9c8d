"""Numerical decay-rate oracle on truncated state spaces.

The chain is restricted to the box {x : x_i <= N} minus the killing simplex
K = {x : sum_i x_i <= k} (k = -1 means no killing).  Jumps into K or out of
the box become pure probability leaks, so the restricted rate matrix Q is
sub-conservative.  Uniformizing with the constant bound on total exit rates
gives the substochastic nonnegative matrix P = I + Q / lam_unif whose Perron
eigenvalue rho converts to the continuous-time decay exponent

    theta = lam_unif * (rho - 1),

the numerical estimate of the log spectral radius (k = -1) or the log
essential spectral radius (k >= 0) as N grows.  Both truncations kill
rather than reflect: survival probabilities on the truncated space are
then monotone lower approximations and P stays substochastic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .errors import StateSpaceTooLarge
from .network import Network, generator_row

#: default power-iteration limits
RESIDUAL_TOL = 1e-10
MAX_ITERATIONS = 200_000

#: default cap on truncated state counts
MAX_STATES = 1_000_000

# Uniformizing at exactly the max exit rate zeroes the diagonal of P at
# fully-busy states; on the +-e_i lattice that makes P periodic (bipartite
# up/down moves) and power iteration oscillates instead of converging.  The
# headroom keeps a positive diagonal, hence a primitive matrix.
UNIF_HEADROOM = 1.05


@dataclass(frozen=True)
class KilledGenerator:
    """Sparse restricted rate matrix with its state indexing."""

    net: Network
    k: int
    N: int
    states: np.ndarray           # (n, d) lattice points, lexicographic order
    index: dict[tuple[int, ...], int]
    Q: scipy.sparse.csr_matrix
    lam_unif: float

    @property
    def n_states(self) -> int:
        return self.states.shape[0]


def build_killed_generator(net: Network, k: int, N: int,
                           max_states: int = MAX_STATES) -> KilledGenerator:
    """Assemble the rate matrix on Box(N) minus the killing simplex.

    Rows corresponding to states adjacent to the simplex or to the outer
    boundary have strictly negative sums (the leak); interior rows are
    conservative.
    """
    if N <= k:
        raise ValueError(f"need N > k, got N={N}, k={k}")
    if k < -1:
        raise ValueError("k = -1 disables killing; smaller values are meaningless")
    d = net.d
    est = (N + 1) ** d
    if est > max_states * 4:
        raise StateSpaceTooLarge(f"Box({N}) in d={d} has {est} states")
    states = [
        x for x in itertools.product(range(N + 1), repeat=d) if sum(x) > k
    ]
    n = len(states)
    if n > max_states:
        raise StateSpaceTooLarge(f"{n} states exceed the cap {max_states}")
    if n == 0:
        raise ValueError("empty truncated state space")
    index = {x: i for i, x in enumerate(states)}

    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for i, x in enumerate(states):
        for tr in generator_row(net, x):
            diag[i] -= tr.rate
            y = tuple(a + b for a, b in zip(x, tr.offset))
            j = index.get(y)
            if j is not None and max(y) <= N:
                rows.append(i)
                cols.append(j)
                vals.append(tr.rate)
    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend(diag.tolist())
    q = scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(n, n), dtype=float
    )
    lam_unif = UNIF_HEADROOM * net.total_rate_bound
    return KilledGenerator(net, k, N, np.array(states, dtype=np.int64), index, q, lam_unif)


@dataclass(frozen=True)
class SpectralEstimate:
    rho: float                  # Perron eigenvalue of the uniformized matrix
    theta: float                # lam_unif * (rho - 1), the decay exponent
    iterations: int
    residual: float
    N: int
    k: int
    converged: bool


def top_eigen(kg: KilledGenerator, tol: float = RESIDUAL_TOL,
              max_iter: int = MAX_ITERATIONS) -> SpectralEstimate:
    """Perron eigenvalue of P = I + Q/lam_unif by power iteration.

    Starts from the uniform vector (deterministic), estimates rho by the
    Rayleigh quotient, and certifies with the sup-norm residual
    ||P v - rho v||_inf / ||v||_inf.  On hitting the iteration cap the best
    iterate is returned with ``converged=False``.
    """
    n = kg.n_states
    q = kg.Q
    inv = 1.0 / kg.lam_unif
    v = np.full(n, 1.0 / np.sqrt(n))
    rho = 1.0
    residual = np.inf
    it = 0
    check_every = 20
    while it < max_iter:
        for _ in range(check_every):
            w = v + inv * (q @ v)
            nw = float(np.linalg.norm(w))
            if nw <= 0.0:
                # all mass leaked in one step; decay faster than resolvable
                return SpectralEstimate(0.0, -kg.lam_unif, it, 0.0, kg.N, kg.k, True)
            v = w / nw
            it += 1
        w = v + inv * (q @ v)
        rho = float(v @ w)
        residual = float(np.abs(w - rho * v).max() / np.abs(v).max())
        if residual <= tol:
            theta = kg.lam_unif * (rho - 1.0)
            return SpectralEstimate(rho, theta, it, residual, kg.N, kg.k, True)
    theta = kg.lam_unif * (rho - 1.0)
    return SpectralEstimate(rho, theta, it, residual, kg.N, kg.k, False)


def dense_top_eigen(kg: KilledGenerator, max_states: int = 2000) -> float:
    """Brute-force oracle: the largest-modulus eigenvalue of dense P.

    The matrix is nonnegative, so the Perron root is real; only modest
    state counts are accepted.
    """
    if kg.n_states > max_states:
        raise StateSpaceTooLarge(
            f"dense oracle limited to {max_states} states, got {kg.n_states}"
        )
    p = np.eye(kg.n_states) + kg.Q.toarray() / kg.lam_unif
    eig = np.linalg.eigvals(p)
    return float(np.max(eig.real))


def estimate_decay(net: Network, ks, Ns, tol: float = RESIDUAL_TOL,
                   max_iter: int = MAX_ITERATIONS,
                   max_states: int = MAX_STATES) -> "DecayTable":
    """Decay exponents over a (k, N) grid with a convergence-in-N flag.

    The reported estimate is theta at the largest (k, N); the flag compares
    it against the run at half the truncation (or the nearest smaller N in
    the grid) at 1% relative tolerance.
    """
    ks = sorted(set(int(k) for k in ks))
    Ns = sorted(set(int(N) for N in Ns))
    rows: list[SpectralEstimate] = []
    for k in ks:
        for N in Ns:
            kg = build_killed_generator(net, k, N, max_states=max_states)
            rows.append(top_eigen(kg, tol=tol, max_iter=max_iter))
    k_top, n_top = ks[-1], Ns[-1]
    final = next(r for r in rows if r.k == k_top and r.N == n_top)
    flag = False
    smaller = [N for N in Ns if N < n_top]
    if smaller:
        n_ref = n_top // 2 if n_top // 2 in Ns else smaller[-1]
        ref = next(r for r in rows if r.k == k_top and r.N == n_ref)
        denom = max(abs(final.theta), 1e-12)
        flag = abs(final.theta - ref.theta) / denom <= 1e-2
    return DecayTable(tuple(rows), final, flag)


@dataclass(frozen=True)
class DecayTable:
    rows: tuple[SpectralEstimate, ...]
    final: SpectralEstimate
    n_converged: bool

    def csv_lines(self) -> list[str]:
        out = ["k,N,rho,theta,residual,iterations,converged"]
        for r in self.rows:
            out.append(
                f"{r.k},{r.N},{r.rho:.15g},{r.theta:.15g},{r.residual:.6g},"
                f"{r.iterations},{int(r.converged)}"
            )
        return out


def estimate_log_rstar_e(net: Network, ks, Ns, **kwargs) -> DecayTable:
    """Essential-radius oracle: killed truncations over increasing (k, N)."""
    ks = [k for k in ks if k >= 0]
    if not ks:
        raise ValueError("essential estimates need at least one k >= 0")
    return estimate_decay(net, ks, Ns, **kwargs)


def estimate_log_rstar(net: Network, Ns, **kwargs) -> DecayTable:
    """Plain-radius oracle: outer truncation only (k = -1)."""
    return estimate_decay(net, [-1], Ns, **kwargs)
