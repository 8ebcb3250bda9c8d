"""Large-deviation rate machinery for Jackson networks.

The exponential growth rate of the queue-length chain applied to
``exp <alpha, x>`` at an interior state is the strictly convex function

    log_mgf(alpha) = sum_i mu_i (sum_j p_ij e^{a_j - a_i} + exit_i e^{-a_i} - 1)
                     + sum_i lam_i (e^{a_i} - 1).

On a boundary face ``F`` (the set of stations whose coordinate stays
positive) only the service terms of stations in ``F`` act, giving the
partial sums ``log_mgf_face``.  The instantaneous cost of moving with
velocity v on face F is the Legendre-type transform

    local_rate(F, v) = sup_alpha ( <alpha, v> - max_{F' >= F} log_mgf_face(F', alpha) ).

The maximum over supersets decomposes term by term: writing ``s_i(alpha)``
for station i's service contribution, it equals

    arrivals(alpha) + sum_{i in F} s_i(alpha) + sum_{i not in F} max(s_i(alpha), 0),

because each station outside F is included exactly when its term is
positive.  The objective is therefore concave and piecewise smooth, with
kinks on the surfaces {s_i = 0}.  Conveniently these surfaces are exactly
the boundaries of the dual feasibility regions: ``alpha`` satisfies the
face-F dual constraint for station i iff ``s_i(alpha) >= 0``, and the
constraint manifold {s_i = 0, i in Z} is linear in ``u = exp(alpha)``:
``u_i = (P u)_i + exit_i``.  The optimizer exploits all three facts:

1. active-set Newton solves on the smooth pieces (certifies global optima
   whenever the sign pattern at the solution is strict),
2. subgradient ascent with Polyak-style level steps plus per-coordinate
   bisection for the nonsmooth remainder,
3. a ridge polish that eliminates near-active constraints through the
   linear substitution above and re-optimizes the reduced problem.

Values are exact lower bounds (every candidate is evaluated through the
true objective); the advertised relative accuracy is 1e-8.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable

import numpy as np
import scipy.optimize

from .errors import DimensionUnsupported, NotErgodic, Overflow, Unbounded
from .network import Classification, Network, TrafficSolution, solve_traffic

#: dual variables are capped at this magnitude to prevent exp overflow
ALPHA_CAP = 50.0

_VALUE_TOL = 1e-10       # stop when improvements fall below this
_GRAD_TOL = 1e-10        # Newton stationarity tolerance
_STRICT_SIGN = 1e-9      # margin for certifying an active-set sign pattern
_RIDGE_NEAR = 1e-5       # |s_i| below this (scaled) marks a near-active ridge


def face_of(x) -> frozenset[int]:
    """Stations with a strictly positive coordinate at the point x."""
    arr = np.asarray(x, dtype=float)
    return frozenset(int(i) for i in np.nonzero(arr > 0)[0])


def _as_face(face: Iterable[int], d: int) -> frozenset[int]:
    f = frozenset(int(i) for i in face)
    if any(i < 0 or i >= d for i in f):
        raise ValueError(f"face {sorted(f)} not a subset of range({d})")
    return f


class RateEnv:
    """Evaluator bundle for one network.

    Caches the traffic solution and the per-face costs of zero velocity,
    which path optimization queries repeatedly.  Instances are immutable
    once built and safe to share across threads.
    """

    def __init__(self, net: Network):
        self.net = net
        self.traffic: TrafficSolution = solve_traffic(net)
        self._face_zero: dict[frozenset[int], float] = {}
        self._full = frozenset(range(net.d))

    @property
    def d(self) -> int:
        return self.net.d

    @property
    def full_face(self) -> frozenset[int]:
        return self._full

    @property
    def mean_drift(self) -> np.ndarray:
        """Gradient of log_mgf at 0: lam + mu @ routing - mu."""
        n = self.net
        return n.lam + n.routing.T @ n.mu - n.mu

    # -- raw evaluations ----------------------------------------------------

    def _check_alpha(self, alpha) -> np.ndarray:
        a = np.asarray(alpha, dtype=float)
        if a.shape != (self.d,):
            raise ValueError(f"alpha has shape {a.shape}, expected ({self.d},)")
        if not np.all(np.isfinite(a)) or np.abs(a).max() > ALPHA_CAP:
            raise Overflow(f"|alpha| exceeds the cap {ALPHA_CAP}")
        return a

    def service_terms(self, alpha) -> np.ndarray:
        """Per-station service contribution s_i(alpha)."""
        a = self._check_alpha(alpha)
        e = np.exp(a)
        flow = self.net.routing @ e + self.net.exit
        return self.net.mu * (flow / e - 1.0)

    def log_mgf(self, alpha) -> float:
        """Exponential growth rate at interior states; vanishes at alpha=0."""
        a = self._check_alpha(alpha)
        e = np.exp(a)
        return float(self.net.lam @ (e - 1.0) + self.service_terms(a).sum())

    def log_mgf_face(self, face, alpha) -> float:
        """Partial growth rate with service active only on ``face``."""
        a = self._check_alpha(alpha)
        f = _as_face(face, self.d)
        e = np.exp(a)
        s = self.service_terms(a)
        total = float(self.net.lam @ (e - 1.0))
        for i in f:
            total += float(s[i])
        return total

    def in_dual_region(self, face, alpha) -> bool:
        """Whether alpha satisfies the face's dual constraints:
        alpha_i <= log((P e^alpha)_i + exit_i) for every station i off the
        face, equivalently s_i(alpha) >= 0 there (checked with 1e-12 slack).
        """
        f = _as_face(face, self.d)
        s = self.service_terms(alpha)
        off = [i for i in range(self.d) if i not in f]
        return all(s[i] >= -1e-12 * (1.0 + self.net.mu[i]) for i in off)

    # -- Legendre transforms ---------------------------------------------------

    def local_rate(self, face, v) -> float:
        """Velocity cost on a face; concave maximization described above."""
        f = _as_face(face, self.d)
        vv = np.asarray(v, dtype=float)
        if vv.shape != (self.d,):
            raise ValueError(f"v has shape {vv.shape}, expected ({self.d},)")
        if not np.all(np.isfinite(vv)):
            raise ValueError("v must be finite")
        value, _ = _maximize_face_conjugate(self, f, vv)
        return value

    def local_rate_at(self, x, v) -> float:
        """Velocity cost at a point of the orthant (face inferred from x)."""
        return self.local_rate(face_of(x), v)

    def face_zero_cost(self, face) -> float:
        """Cached local_rate(face, 0)."""
        f = _as_face(face, self.d)
        if f not in self._face_zero:
            self._face_zero[f] = self.local_rate(f, np.zeros(self.d))
        return self._face_zero[f]

    def lower_rate(self, v) -> float:
        """Uniform convex lower bound: the empty-face cost."""
        return self.local_rate(frozenset(), v)

    def upper_rate(self, v) -> float:
        """Uniform convex upper bound: the full Legendre transform of
        log_mgf, computed by damped Newton (the objective is smooth)."""
        vv = np.asarray(v, dtype=float)
        alpha, value, on_cap = _newton_active(
            self, np.ones(self.d, dtype=bool), vv, np.zeros(self.d)
        )
        if on_cap:
            raise Unbounded(
                f"conjugate maximizer for v={vv.tolist()} hit the dual cap"
            )
        return value

    # -- closed forms -----------------------------------------------------------

    def min_loop_cost(self) -> float:
        """Cheapest unit-time loop: the empty-face cost of zero velocity.
        Its negative is the log of the spectral radius.  Zero for recurrent
        networks, strictly positive for transient ones."""
        return self.face_zero_cost(frozenset())

    def min_loop_cost_off_origin(self) -> tuple[float, str]:
        """Cheapest unit-time loop that avoids the origin; its negative is
        the log of the essential spectral radius.

        d=1 has the analytic value (sqrt(mu)-sqrt(lam))^2.  d=2 splits on
        recurrence: the ergodic case has the analytic axis formula
        (1 - p01 p10) min_i (sqrt(mu_i)-sqrt(nu_i))^2, and the non-ergodic
        case coincides with :meth:`min_loop_cost`.  No closed form exists
        for d >= 3; callers should fall back to variational bounds.
        """
        n = self.net
        if self.d == 1:
            # single station routes nowhere, so nu = lam and the growth
            # rate mu(e^-a - 1) + lam(e^a - 1) has infimum -(smu - slam)^2
            return (math.sqrt(n.mu[0]) - math.sqrt(n.lam[0])) ** 2, "analytic-d1"
        if self.d == 2:
            if self.traffic.classification is Classification.ERGODIC:
                nu = self.traffic.nu
                coef = 1.0 - n.routing[0, 1] * n.routing[1, 0]
                gaps = [
                    (math.sqrt(n.mu[i]) - math.sqrt(nu[i])) ** 2 for i in range(2)
                ]
                return coef * min(gaps), "analytic-d2-ergodic"
            return self.min_loop_cost(), "equals-min-loop-cost"
        raise DimensionUnsupported(
            "no closed form for d >= 3; use pathopt.minimize_loop with "
            "origin avoidance for a variational bound"
        )

    def log_spectral_radius(self) -> float:
        return -self.min_loop_cost()

    def log_essential_radius(self) -> float:
        value, _ = self.min_loop_cost_off_origin()
        return -value

    def axis_dual_minimizer(self, i: int) -> tuple[np.ndarray, float]:
        """Minimizer of log_mgf on the dual boundary of axis face {i} for an
        ergodic two-station network, and the value there.

        For i=0 the point is (log sqrt(mu0/nu0), log(p10 sqrt(mu0/nu0) + exit1))
        with value -(1 - p01 p10)(sqrt(mu0) - sqrt(nu0))^2; i=1 is symmetric.
        """
        if self.d != 2:
            raise DimensionUnsupported("axis minimizers are a two-station construction")
        if self.traffic.classification is not Classification.ERGODIC:
            raise NotErgodic(
                f"network is {self.traffic.classification.value}; "
                "the axis minimizer formulas require ergodicity"
            )
        n = self.net
        nu = self.traffic.nu
        if i not in (0, 1):
            raise ValueError("station index must be 0 or 1")
        j = 1 - i
        root = math.sqrt(n.mu[i] / nu[i])
        alpha = np.zeros(2)
        alpha[i] = math.log(root)
        alpha[j] = math.log(n.routing[j, i] * root + n.exit[j])
        coef = 1.0 - n.routing[0, 1] * n.routing[1, 0]
        value = -coef * (math.sqrt(n.mu[i]) - math.sqrt(nu[i])) ** 2
        return alpha, value


# ---------------------------------------------------------------------------
# concave maximization internals
# ---------------------------------------------------------------------------


def _face_mask(d: int, face: frozenset[int]) -> np.ndarray:
    mask = np.zeros(d, dtype=bool)
    for i in face:
        mask[i] = True
    return mask


def _eval(env: RateEnv, fmask: np.ndarray, v: np.ndarray, alpha: np.ndarray):
    """Objective g(alpha) = <alpha,v> - arrivals - sum_face s - sum max(s,0)
    plus the pieces needed for a subgradient."""
    n = env.net
    e = np.exp(alpha)
    flow = n.routing @ e + n.exit
    s = n.mu * (flow / e - 1.0)
    mask = fmask | (s > 0.0)
    value = float(alpha @ v - n.lam @ (e - 1.0) - s[mask].sum())
    return value, (e, s, mask)


def _subgrad(env: RateEnv, v: np.ndarray, aux) -> np.ndarray:
    e, s, mask = aux
    n = env.net
    w = np.where(mask, n.mu, 0.0) / e
    grad_services = e * (n.routing.T @ w) - np.where(mask, s + n.mu, 0.0)
    return v - n.lam * e - grad_services


def _smooth_value_grad(env: RateEnv, act: np.ndarray, v: np.ndarray, alpha: np.ndarray):
    """Value and gradient of the smooth piece with a fixed active set."""
    n = env.net
    e = np.exp(alpha)
    flow = n.routing @ e + n.exit
    s = n.mu * (flow / e - 1.0)
    value = float(alpha @ v - n.lam @ (e - 1.0) - s[act].sum())
    w = np.where(act, n.mu, 0.0) / e
    grad = v - n.lam * e - (e * (n.routing.T @ w) - np.where(act, s + n.mu, 0.0))
    return value, grad, s


def _smooth_hessian(env: RateEnv, act: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Hessian of arrivals + sum of active service terms (positive semidef)."""
    n = env.net
    d = env.d
    e = np.exp(alpha)
    w = (np.where(act, n.mu, 0.0) / e)[:, None] * n.routing * e[None, :]
    h = np.diag(n.lam * e + np.where(act, n.mu * n.exit / e, 0.0))
    h += np.diag(w.sum(axis=1) + w.sum(axis=0))
    h -= w + w.T
    return h


def _newton_active(env: RateEnv, act: np.ndarray, v: np.ndarray, alpha0: np.ndarray,
                   max_iter: int = 80):
    """Damped Newton maximization of the fixed-active-set smooth piece.

    Returns (alpha, value, hit_cap).  The piece is concave, so backtracking
    on the value suffices for global convergence within the cap box.
    """
    alpha = alpha0.copy()
    value, grad, _ = _smooth_value_grad(env, act, v, alpha)
    hit_cap = False
    for _ in range(max_iter):
        gnorm = float(np.abs(grad).max())
        if gnorm <= _GRAD_TOL * (1.0 + float(np.abs(v).max())):
            break
        h = _smooth_hessian(env, act, alpha)
        ridge = 1e-13 * (1.0 + float(np.trace(h)))
        try:
            step = np.linalg.solve(h + ridge * np.eye(env.d), grad)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        improved = False
        for _ in range(60):
            cand = np.clip(alpha + t * step, -ALPHA_CAP, ALPHA_CAP)
            cval, cgrad, _ = _smooth_value_grad(env, act, v, cand)
            if cval > value:
                alpha, value, grad = cand, cval, cgrad
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    hit_cap = bool(np.abs(alpha).max() >= ALPHA_CAP * (1.0 - 1e-9))
    return alpha, value, hit_cap


def _coordinate_bisect(env: RateEnv, fmask: np.ndarray, v: np.ndarray,
                       alpha: np.ndarray, k: int) -> None:
    """Maximize over coordinate k in place (1-d concave bisection on the
    subgradient sign).  The sign change is bracketed outward from the
    incumbent before bisecting, since the optimum is usually nearby."""
    def deriv(z: float) -> float:
        alpha[k] = z
        val, aux = _eval(env, fmask, v, alpha)
        return float(_subgrad(env, v, aux)[k])

    center = float(alpha[k])
    g0 = deriv(center)
    span = 0.5
    if g0 > 0.0:
        lo = center
        hi = min(center + span, ALPHA_CAP)
        while deriv(hi) > 0.0:
            if hi >= ALPHA_CAP:
                alpha[k] = ALPHA_CAP
                return
            lo, span = hi, span * 4.0
            hi = min(hi + span, ALPHA_CAP)
    elif g0 < 0.0:
        hi = center
        lo = max(center - span, -ALPHA_CAP)
        while deriv(lo) < 0.0:
            if lo <= -ALPHA_CAP:
                alpha[k] = -ALPHA_CAP
                return
            hi, span = lo, span * 4.0
            lo = max(lo - span, -ALPHA_CAP)
    else:
        alpha[k] = center
        return
    for _ in range(55):
        mid = 0.5 * (lo + hi)
        if deriv(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13:
            break
    alpha[k] = 0.5 * (lo + hi)


def _subgradient_phase(env: RateEnv, fmask: np.ndarray, v: np.ndarray,
                       alpha0: np.ndarray, best: float, iters: int = 150):
    """Polyak-style level subgradient ascent.  The level target is
    best + delta with delta halved after stretches without improvement;
    convergence is declared when the level gap is exhausted."""
    alpha = alpha0.copy()
    best_alpha = alpha0.copy()
    delta = max(0.5, 0.1 * abs(best))
    stall = 0
    for _ in range(iters):
        value, aux = _eval(env, fmask, v, alpha)
        if value > best + _VALUE_TOL * (1.0 + abs(best)):
            best, best_alpha, stall = value, alpha.copy(), 0
        else:
            stall += 1
        g = _subgrad(env, v, aux)
        gnorm2 = float(g @ g)
        if gnorm2 < 1e-26:
            break
        if stall >= 50:
            delta *= 0.5
            stall = 0
            alpha = best_alpha.copy()
            if delta < 1e-12:
                break
            continue
        step = (best + delta - value) / gnorm2
        alpha = np.clip(alpha + step * g, -ALPHA_CAP, ALPHA_CAP)
    return best_alpha, best


def _golden_max(f, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200):
    """Golden-section maximization on [lo, hi] (no concavity assumed; used
    only as a local polish)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d_ = a + invphi * (b - a)
    fc, fd = f(c), f(d_)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc > fd:
            b, d_, fd = d_, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + invphi * (b - a)
            fd = f(d_)
    mid = 0.5 * (a + b)
    return mid, f(mid)


def _ridge_alpha(env: RateEnv, ridge: tuple[int, ...], free_vals: np.ndarray,
                 free_idx: tuple[int, ...]):
    """Assemble alpha with s_i = 0 enforced on ``ridge``.

    In u = exp(alpha) coordinates the constraints read u_Z = P_ZZ u_Z +
    P_Z,free u_free + exit_Z, a linear system with invertible matrix since
    the routing radius is below one.
    """
    n = env.net
    z = list(ridge)
    u = np.zeros(env.d)
    for pos, i in enumerate(free_idx):
        if abs(free_vals[pos]) > ALPHA_CAP:
            return None
        u[i] = math.exp(free_vals[pos])
    mat = np.eye(len(z)) - n.routing[np.ix_(z, z)]
    rhs = n.exit[z].copy()
    if free_idx:
        rhs = rhs + n.routing[np.ix_(z, list(free_idx))] @ u[list(free_idx)]
    try:
        uz = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        return None
    if np.any(uz <= 1e-290):
        return None
    alpha = np.zeros(env.d)
    for pos, i in enumerate(free_idx):
        alpha[i] = free_vals[pos]
    for pos, i in enumerate(z):
        a = math.log(uz[pos])
        if abs(a) > ALPHA_CAP:
            return None
        alpha[i] = a
    return alpha


def _ridge_polish(env: RateEnv, fmask: np.ndarray, v: np.ndarray,
                  alpha: np.ndarray, best: float):
    """Re-optimize with near-active constraints pinned to their manifolds."""
    _, (_, s, _) = _eval(env, fmask, v, alpha)
    near = [
        i for i in range(env.d)
        if not fmask[i] and abs(s[i]) <= _RIDGE_NEAR * (1.0 + env.net.mu[i])
    ]
    if not near or len(near) > 3:
        return alpha, best
    best_alpha = alpha
    for r in range(1, len(near) + 1):
        for ridge in itertools.combinations(near, r):
            free_idx = tuple(i for i in range(env.d) if i not in ridge)

            def on_ridge(free_vals) -> float:
                cand = _ridge_alpha(env, ridge, np.atleast_1d(free_vals), free_idx)
                if cand is None:
                    return -np.inf
                val, _ = _eval(env, fmask, v, cand)
                return val

            if not free_idx:
                val = on_ridge(np.zeros(0))
                cand = _ridge_alpha(env, ridge, np.zeros(0), free_idx)
            elif len(free_idx) == 1:
                cur = alpha[free_idx[0]]
                span = 4.0
                zopt, val = _golden_max(
                    lambda z: on_ridge(np.array([z])),
                    max(cur - span, -ALPHA_CAP), min(cur + span, ALPHA_CAP),
                )
                zopt, val = _golden_max(
                    lambda z: on_ridge(np.array([z])),
                    max(zopt - 1e-3, -ALPHA_CAP), min(zopt + 1e-3, ALPHA_CAP),
                    tol=1e-14,
                )
                cand = _ridge_alpha(env, ridge, np.array([zopt]), free_idx)
            else:
                res = scipy.optimize.minimize(
                    lambda z: -on_ridge(z), alpha[list(free_idx)],
                    method="Nelder-Mead",
                    options={"maxiter": 400, "xatol": 1e-10, "fatol": 1e-12},
                )
                val = -float(res.fun)
                cand = _ridge_alpha(env, ridge, res.x, free_idx)
            if cand is not None and val > best:
                best, best_alpha = val, cand
    return best_alpha, best


def _maximize_face_conjugate(env: RateEnv, face: frozenset[int], v: np.ndarray):
    """Drive the phases; returns (value, alpha)."""
    d = env.d
    fmask = _face_mask(d, face)
    zero = np.zeros(d)
    best_value, aux0 = _eval(env, fmask, v, zero)   # always exactly representable
    best_alpha = zero.copy()

    if d == 1:
        alpha = zero.copy()
        _coordinate_bisect(env, fmask, v, alpha, 0)
        if abs(alpha[0]) >= ALPHA_CAP * (1.0 - 1e-12):
            val, aux = _eval(env, fmask, v, alpha)
            g = _subgrad(env, v, aux)
            if (alpha[0] > 0 and g[0] > 1e-9) or (alpha[0] < 0 and g[0] < -1e-9):
                raise Unbounded(f"1-d conjugate unbounded for v={v.tolist()}")
        val, _ = _eval(env, fmask, v, alpha)
        return (val, alpha) if val > best_value else (best_value, best_alpha)

    # active-set Newton chain, seeded from the full set (whose smooth piece
    # is the everywhere-finite conjugate); certify when the sign pattern at
    # a fixed point is strict
    act = np.ones(d, dtype=bool)
    alpha = zero.copy()
    seen: set[bytes] = set()
    for _ in range(d + 4):
        key = act.tobytes()
        if key in seen:
            break
        seen.add(key)
        alpha, _, hit_cap = _newton_active(env, act, v, alpha)
        true_val, (e, s, mask) = _eval(env, fmask, v, alpha)
        if true_val > best_value:
            best_value, best_alpha = true_val, alpha.copy()
        new_act = fmask | (s > 0.0)
        if not hit_cap and np.array_equal(new_act, act):
            margins = np.where(
                fmask, np.inf, np.where(act, s, -s) / (1.0 + env.net.mu)
            )
            _, grad, _ = _smooth_value_grad(env, act, v, alpha)
            if margins.min() > _STRICT_SIGN and np.abs(grad).max() <= 1e-8 * (
                1.0 + float(np.abs(v).max())
            ):
                # smooth certified optimum: g coincides with the concave
                # objective near alpha and is stationary there
                return true_val, alpha
            break
        act = new_act

    # nonsmooth phases: coordinate sweeps localize, the ridge polish moves
    # along kink manifolds, and a subgradient pass guards against stalls
    def sweep(val: float, point: np.ndarray):
        work = point.copy()
        for _ in range(25):
            before = val
            for k in range(d):
                _coordinate_bisect(env, fmask, v, work, k)
            cand, _ = _eval(env, fmask, v, work)
            if cand > val:
                val, point = cand, work.copy()
            if val - before <= 1e-13 * (1.0 + abs(val)):
                break
        return val, point

    best_value, best_alpha = sweep(best_value, best_alpha)
    best_alpha, best_value = _ridge_polish(env, fmask, v, best_alpha, best_value)

    alpha, sub_val = _subgradient_phase(env, fmask, v, best_alpha, best_value, iters=150)
    if sub_val > best_value + 1e-10 * (1.0 + abs(best_value)):
        best_value, best_alpha = sub_val, alpha
        best_value, best_alpha = sweep(best_value, best_alpha)
        best_alpha, best_value = _ridge_polish(env, fmask, v, best_alpha, best_value)

    if np.abs(best_alpha).max() >= ALPHA_CAP * (1.0 - 1e-9):
        _, aux = _eval(env, fmask, v, best_alpha)
        g = _subgrad(env, v, aux)
        outward = (
            ((best_alpha >= ALPHA_CAP * (1 - 1e-9)) & (g > 1e-8))
            | ((best_alpha <= -ALPHA_CAP * (1 - 1e-9)) & (g < -1e-8))
        )
        if outward.any():
            raise Unbounded(f"conjugate unbounded for v={v.tolist()}")
    return best_value, best_alpha
