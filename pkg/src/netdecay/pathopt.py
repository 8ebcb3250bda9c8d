"""Piecewise-linear loops in the orthant and action minimization.

A loop is a closed piecewise-linear path.  Along the open interior of a
straight segment in the closed orthant the set of positive coordinates is
constant (a coordinate vanishes identically only when both endpoints do),
so each segment carries one face label and one velocity, and the action

    action(loop) = sum_j (s_{j+1} - s_j) * local_rate(face_j, velocity_j)

is an exact finite sum.  Minimizing it over unit-time loops estimates the
decay exponents variationally: over all loops for the spectral radius, and
over loops kept away from the origin for the essential spectral radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FaceMismatch, NoFeasibleSeed
from .ratefn import RateEnv

#: seeds below this action never need refining further
_DESCENT_VALUE_TOL = 1e-12


@dataclass(frozen=True)
class PathLoop:
    """Closed piecewise-linear path: times[0]=0 < ... < times[m]=T,
    vertices in the closed orthant with vertices[0] == vertices[m],
    and one face label per segment."""

    times: np.ndarray            # shape (m+1,)
    vertices: np.ndarray         # shape (m+1, d)
    faces: tuple[frozenset[int], ...]   # length m

    def __post_init__(self):
        self.times.setflags(write=False)
        self.vertices.setflags(write=False)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def segments(self) -> int:
        return len(self.faces)


def segment_face(a: np.ndarray, b: np.ndarray) -> frozenset[int]:
    """Face of the open interior of the segment [a, b]: coordinates positive
    somewhere on it, i.e. positive at either endpoint."""
    return frozenset(int(i) for i in np.nonzero(np.maximum(a, b) > 0)[0])


def make_loop(times, vertices) -> PathLoop:
    """Preprocess raw (times, vertices) into a labelled loop."""
    t = np.asarray(times, dtype=float).copy()
    x = np.asarray(vertices, dtype=float).copy()
    if t.ndim != 1 or x.ndim != 2 or x.shape[0] != t.shape[0]:
        raise ValueError(f"incompatible shapes: times {t.shape}, vertices {x.shape}")
    if t.shape[0] < 2:
        raise ValueError("a loop needs at least one segment")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    if t[0] != 0.0:
        raise ValueError("times must start at 0")
    if np.any(x < 0):
        raise ValueError("vertices must lie in the closed orthant")
    if not np.array_equal(x[0], x[-1]):
        raise ValueError("loop must close: first and last vertices must coincide")
    faces = tuple(segment_face(x[j], x[j + 1]) for j in range(t.shape[0] - 1))
    return PathLoop(t, x, faces)


@dataclass(frozen=True)
class ActionValue:
    value: float
    per_segment: tuple[float, ...]


def action(env: RateEnv, loop: PathLoop) -> ActionValue:
    """Exact action of a labelled loop.

    Raises :class:`FaceMismatch` if a stored label disagrees with the
    segment interior, which means the loop bypassed :func:`make_loop`.
    """
    contributions = []
    total = 0.0
    for j in range(loop.segments):
        a, b = loop.vertices[j], loop.vertices[j + 1]
        dt = float(loop.times[j + 1] - loop.times[j])
        interior = segment_face(a, b)
        if interior != loop.faces[j]:
            raise FaceMismatch(
                f"segment {j}: stored face {sorted(loop.faces[j])} but interior "
                f"face is {sorted(interior)}"
            )
        vel = (b - a) / dt
        if dt > 0 and not np.any(vel):
            rate = env.face_zero_cost(loop.faces[j])
        else:
            rate = env.local_rate(loop.faces[j], vel)
        piece = dt * rate
        contributions.append(piece)
        total += piece
    return ActionValue(total, tuple(contributions))


def time_rescaled(loop: PathLoop) -> PathLoop:
    """Map a loop on [0, T] to [0, 1] by t -> loop(T t)/T.

    Velocities and faces are unchanged, so the original action is T times
    the rescaled one."""
    t = loop.horizon
    return PathLoop(loop.times / t, loop.vertices / t, loop.faces)


def split_at(loop: PathLoop, t: float) -> PathLoop:
    """Insert a breakpoint at time t (interpolating the vertex)."""
    if not 0.0 < t < loop.horizon:
        raise ValueError(f"breakpoint {t} outside (0, {loop.horizon})")
    times = loop.times
    if t in times:
        return loop
    j = int(np.searchsorted(times, t)) - 1
    frac = (t - times[j]) / (times[j + 1] - times[j])
    vertex = (1 - frac) * loop.vertices[j] + frac * loop.vertices[j + 1]
    new_times = np.insert(times, j + 1, t)
    new_vertices = np.insert(loop.vertices, j + 1, vertex, axis=0)
    return make_loop(new_times, new_vertices)


def restrict(loop: PathLoop, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Times and vertices of the restriction to [lo, hi] (breakpoints must
    already exist at lo and hi); used for concatenation checks."""
    times = loop.times
    i = int(np.searchsorted(times, lo))
    j = int(np.searchsorted(times, hi))
    if times[i] != lo or times[j] != hi:
        raise ValueError("restrict endpoints must be existing breakpoints")
    return times[i:j + 1] - lo, loop.vertices[i:j + 1]


def constant_path_value(env: RateEnv, x) -> float:
    """Unit-time action of the constant path at x: the zero-velocity cost
    of x's face."""
    xx = np.asarray(x, dtype=float)
    return env.face_zero_cost(frozenset(int(i) for i in np.nonzero(xx > 0)[0]))


def constant_loop(env: RateEnv, x, m: int = 1) -> PathLoop:
    xx = np.asarray(x, dtype=float)
    times = np.linspace(0.0, 1.0, m + 1)
    verts = np.tile(xx, (m + 1, 1))
    return make_loop(times, verts)


def origin_distance_floor(env: RateEnv) -> float:
    """Surrogate for the open constraint "never touches the origin": interior
    vertices keep 1-norm at least 1e-3 * (1 + mean service rate)."""
    return 1e-3 * (1.0 + float(env.net.mu.mean()))


def _project(env: RateEnv, x: np.ndarray, avoid_origin: bool, floor: float) -> np.ndarray:
    y = np.maximum(x, 0.0)
    if avoid_origin:
        norm = float(y.sum())
        if norm < floor:
            if norm <= 0.0:
                y = np.full(env.d, floor / env.d)
            else:
                y = y * (floor / norm)
    return y


def default_seeds(env: RateEnv, avoid_origin: bool, m: int, rng: np.random.Generator,
                  n_random: int = 8) -> list[PathLoop]:
    """Constant paths at the origin (unless excluded), at each axis, and at
    the interior centroid, plus random closed loops in a moderate box."""
    d = env.d
    floor = origin_distance_floor(env)
    seeds: list[PathLoop] = []
    if not avoid_origin:
        seeds.append(constant_loop(env, np.zeros(d), m))
    for i in range(d):
        x = np.zeros(d)
        x[i] = 1.0
        seeds.append(constant_loop(env, x, m))
    seeds.append(constant_loop(env, np.ones(d), m))
    times = np.linspace(0.0, 1.0, m + 1)
    for _ in range(n_random):
        verts = rng.uniform(0.0, 2.0, size=(m + 1, d))
        verts[-1] = verts[0]
        verts = np.array([_project(env, p, avoid_origin, floor) for p in verts])
        seeds.append(make_loop(times, verts))
    return seeds


def _descend(env: RateEnv, loop: PathLoop, avoid_origin: bool,
             max_sweeps: int, fd_step: float = 1e-6) -> tuple[PathLoop, float]:
    """Projected coordinate descent over vertices.

    Moving one vertex only changes its two adjacent segments, so the sweep
    evaluates local differences.  The closure vertex (first == last) moves
    as a single variable.
    """
    floor = origin_distance_floor(env)
    times = loop.times.copy()
    verts = loop.vertices.copy()
    m = len(times) - 1
    d = env.d

    def seg_cost(j: int, a: np.ndarray, b: np.ndarray) -> float:
        dt = float(times[j + 1] - times[j])
        vel = (b - a) / dt
        face = segment_face(a, b)
        if not np.any(vel):
            return dt * env.face_zero_cost(face)
        return dt * env.local_rate(face, vel)

    def local_cost(idx: int, x: np.ndarray) -> float:
        # segments incident to vertex idx, treating 0 and m as the same point
        cost = 0.0
        if idx == 0:
            cost += seg_cost(0, x, verts[1])
            cost += seg_cost(m - 1, verts[m - 1], x)
        else:
            cost += seg_cost(idx - 1, verts[idx - 1], x)
            cost += seg_cost(idx, x, verts[idx + 1])
        return cost

    total = action(env, make_loop(times, verts)).value
    for _ in range(max_sweeps):
        improved = 0.0
        for idx in range(m):   # vertex m is slaved to vertex 0
            x = verts[idx].copy()
            base = local_cost(idx, x)
            grad = np.zeros(d)
            for c in range(d):
                h = fd_step * (1.0 + abs(x[c]))
                xp = x.copy()
                xp[c] += h
                grad[c] = (local_cost(idx, _project(env, xp, avoid_origin, floor)) - base) / h
            gnorm = float(np.abs(grad).max())
            if gnorm < 1e-10:
                continue
            step = 0.25 * (1.0 + float(np.abs(x).max())) / gnorm
            best_x, best_c = x, base
            for _ in range(12):
                cand = _project(env, x - step * grad, avoid_origin, floor)
                cval = local_cost(idx, cand)
                if cval < best_c - 1e-14:
                    best_x, best_c = cand, cval
                    break
                step *= 0.5
            if best_c < base:
                improved += base - best_c
                verts[idx] = best_x
                if idx == 0:
                    verts[m] = best_x
        if improved <= 1e-10 * (1.0 + abs(total)):
            break
        total -= improved
    final = make_loop(times, verts)
    return final, action(env, final).value


def minimize_loop(env: RateEnv, avoid_origin: bool = False, m: int = 8,
                  seeds: list[PathLoop] | None = None, seed: int = 0,
                  max_sweeps: int = 12) -> tuple[PathLoop, ActionValue]:
    """Best unit-time loop over multi-seed local search.

    ``avoid_origin`` keeps every vertex's 1-norm above
    :func:`origin_distance_floor`, the numeric surrogate for loops that
    never touch the origin.  The returned value is the minimum over seeds
    after descent; ties resolve to the earliest seed.
    """
    if m < 2:
        raise ValueError("need at least two segments")
    rng = np.random.default_rng(seed)
    if seeds is None:
        seeds = default_seeds(env, avoid_origin, m, rng)
    if not seeds:
        raise NoFeasibleSeed("no seed loops supplied")
    floor = origin_distance_floor(env)
    if avoid_origin:
        for s in seeds:
            if np.any(s.vertices.sum(axis=1) < floor * (1 - 1e-12)):
                raise NoFeasibleSeed(
                    "a seed loop violates the origin-avoidance floor"
                )
    best: tuple[float, int, PathLoop] | None = None
    for rank, s in enumerate(seeds):
        start_val = action(env, s).value
        if start_val > _DESCENT_VALUE_TOL:
            refined, val = _descend(env, s, avoid_origin, max_sweeps)
        else:
            refined, val = s, start_val
        if best is None or val < best[0] - 1e-15:
            best = (val, rank, refined)
    value, _, loop = best
    return loop, action(env, loop)
