"""
Simplex Core

This module:
1. Represents population states on the probability simplex and payoff vectors
2. Projects integrator output back onto the simplex (and refuses states that drifted too far)
3. Computes excess payoffs and best-response sets
4. Enumerates Nash equilibria of affine stationary games F(x) = Ax + b by support enumeration
5. Provides seeded samplers (continuous and lattice) used by the property checkers
"""

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from errors import (
    DimensionMismatch,
    DriftExceeded,
    EmptySet,
    InvalidParameter,
    SingularSupportSystem,
    TooManyStrategies,
)

logger = logging.getLogger(__name__)


# ============== CONFIGURATION ==============
DRIFT_BOUND = 1e-6        # farther than this from the simplex -> DriftExceeded
SIMPLEX_TOLERANCE = 1e-12  # entries sum to 1 within this
TIE_TOLERANCE = 1e-9      # best-response ties, payoffs are O(1)
NE_TOLERANCE = 1e-9       # feasibility slack of the support systems
DEDUP_RADIUS = 1e-8       # NE points closer than this are merged
FACE_LP_TOLERANCE = 1e-7  # feasibility slack of the linear programs on singular faces
MAX_ENUMERATION_STRATEGIES = 10
# ===========================================


def _as_vector(values, name="vector"):
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} has non-finite entries: {arr.tolist()}")
    return arr


def _readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PopulationState:
    """Point x of the simplex: entry i is the share of agents playing strategy i."""

    entries: np.ndarray

    def __post_init__(self):
        arr = _as_vector(self.entries, "population state")
        if arr.size < 2:
            raise InvalidParameter(f"A population state needs at least 2 strategies, got {arr.size}")
        if np.any(arr < 0) or np.any(arr > 1 + SIMPLEX_TOLERANCE) or abs(arr.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise DriftExceeded(
                f"Entries {arr.tolist()} are not on the simplex (sum {arr.sum():.17g}); "
                f"use project_to_simplex for integrator output"
            )
        object.__setattr__(self, "entries", _readonly(arr))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __len__(self):
        return self.entries.size

    @property
    def n(self):
        return self.entries.size

    def support(self, tol=0.0):
        return {i for i, value in enumerate(self.entries) if value > tol}


@dataclass(frozen=True)
class PayoffVector:
    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(_as_vector(self.entries, "payoff vector")))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __len__(self):
        return self.entries.size


@dataclass(frozen=True)
class ExcessPayoffVector:
    """p_hat_i = p_i - p'x; its population average x'p_hat is zero."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(_as_vector(self.entries, "excess payoff")))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class NashSet:
    """
    Finite representation of the Nash equilibria of a stationary game.

    When a support face holds a continuum of equilibria one point of it is stored (the
    barycenter when that is an equilibrium) and the matching entry of continuum_flags is
    True; distances to the stored points are then upper bounds on the distance to the set.
    """

    points: tuple
    residuals: tuple
    continuum_flags: tuple = field(default=())

    def __len__(self):
        return len(self.points)

    @property
    def continuum(self):
        return any(self.continuum_flags)

    def as_array(self):
        return np.array([np.asarray(point) for point in self.points])


def _check_same_size(x, p):
    if x.shape != p.shape:
        raise DimensionMismatch(f"State has {x.size} strategies but payoff has {p.size}")


def simplex_drift(v):
    """Sup-norm distance proxy from v to the simplex: sum defect or most negative entry."""
    v = np.asarray(v, dtype=float)
    return max(abs(v.sum() - 1.0), float(max(-v.min(), 0.0)), float(max(v.max() - 1.0, 0.0)))


def project_array(v, drift_bound=DRIFT_BOUND):
    """
    Array-level projection used inside the integrator loop.

    Args:
        v: vector of n >= 2 finite reals
        drift_bound: largest accepted distance from the simplex

    Returns:
        tuple: (projected array, sup-norm size of the correction)
    """
    v = np.asarray(v, dtype=float)
    if v.size < 2 or not np.all(np.isfinite(v)):
        raise DriftExceeded(f"Cannot project {v.tolist()} onto the simplex")
    drift = simplex_drift(v)
    if drift <= SIMPLEX_TOLERANCE and v.min() >= 0:
        return v, 0.0
    if drift > drift_bound:
        raise DriftExceeded(
            f"State {v.tolist()} is {drift:.3e} away from the simplex (bound {drift_bound:.1e})"
        )
    clipped = np.clip(v, 0.0, None)
    projected = clipped / clipped.sum()
    return projected, float(np.max(np.abs(projected - v)))


def project_to_simplex(v, drift_bound=DRIFT_BOUND):
    """
    Clip at 0 and renormalize a vector that is numerically close to the simplex.

    Args:
        v: vector of n >= 2 finite reals
        drift_bound: largest accepted distance from the simplex (default 1e-6)

    Returns:
        PopulationState: v itself if already valid within 1e-12, else the renormalized point

    Raises:
        DriftExceeded: v is farther than drift_bound from the simplex
    """
    projected, _ = project_array(_as_vector(v, "vector"), drift_bound)
    return PopulationState(projected)


def excess_payoff(x, p):
    """
    Excess payoff vector p_hat_i = p_i - p'x.

    Args:
        x: PopulationState or array
        p: PayoffVector or array

    Returns:
        ExcessPayoffVector
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    _check_same_size(x, p)
    return ExcessPayoffVector(p - p @ x)


def best_response_set(p, tol=TIE_TOLERANCE):
    """Indices (0-based) of the strategies whose payoff is within tol of the maximum."""
    if tol < 0:
        raise InvalidParameter(f"tol must be >= 0, got {tol}")
    p = np.asarray(p, dtype=float)
    top = p.max()
    return {int(i) for i in np.flatnonzero(p >= top - tol)}


def best_response_violation(x, p):
    """max_i p_i - p'x; zero exactly when x is a best response to p."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    _check_same_size(x, p)
    return float(p.max() - p @ x)


def is_best_response(x, p, tol=TIE_TOLERANCE):
    """True iff p'x >= max_i p_i - tol."""
    return best_response_violation(x, p) <= tol


def _support_system(A, b, support):
    s = len(support)
    idx = list(support)
    matrix = np.zeros((s + 1, s + 1))
    matrix[:s, :s] = A[np.ix_(idx, idx)]
    matrix[:s, s] = -1.0
    matrix[s, :s] = 1.0
    rhs = np.concatenate([-b[idx], [1.0]])
    return matrix, rhs


def _solve_support(A, b, support):
    """
    Unique solution (x_S, v) of the support system.

    Raises:
        SingularSupportSystem: the system is rank deficient
    """
    matrix, rhs = _support_system(A, b, support)
    if np.linalg.matrix_rank(matrix) < len(support) + 1:
        raise SingularSupportSystem(f"Support {support} has no unique stationary point")
    return np.linalg.solve(matrix, rhs)


def _feasible_face_point(A, b, support, off_support_below, tol):
    """
    Most interior nonnegative solution (x_S, v) of a rank-deficient support system, or None.

    Maximises the smallest entry t of x_S, so the face barycenter comes back whenever it
    solves the system. With off_support_below, (Ax+b)_j <= v is also required off S.
    """
    matrix, rhs = _support_system(A, b, support)
    idx = list(support)
    s = len(idx)
    others = [j for j in range(b.size) if j not in support] if off_support_below else []
    # variables (x_S, v, t)
    A_eq = np.hstack([matrix, np.zeros((s + 1, 1))])
    A_ub = np.zeros((s + len(others), s + 2))
    A_ub[:s, :s] = -np.eye(s)
    A_ub[:s, s + 1] = 1.0
    b_ub = np.zeros(s + len(others))
    if others:
        A_ub[s:, :s] = A[np.ix_(others, idx)]
        A_ub[s:, s] = -1.0
        b_ub[s:] = -b[others]
    cost = np.zeros(s + 2)
    cost[-1] = -1.0
    result = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=rhs,
                     bounds=[(None, None)] * (s + 1) + [(None, 1.0)], method="highs")
    if result.status != 0 or result.x[-1] < -FACE_LP_TOLERANCE:
        return None
    solution = result.x[:-1]
    solution = solution + np.linalg.lstsq(matrix, rhs - matrix @ solution, rcond=None)[0]
    if np.max(np.abs(matrix @ solution - rhs)) > tol:
        return None
    return solution


def face_stationary_points(A, b, tol=NE_TOLERANCE, equilibria_only=False):
    """
    Points of every simplex face where the affine field Ax + b is constant on the support.

    For each nonempty support S the system {(Ax+b)_i = v, i in S; x_j = 0 off S; sum x = 1}
    is solved. A rank-deficient system has a whole set of solutions; one nonnegative
    member is found by linear programming and the candidate is marked as a continuum.

    Args:
        A: n x n matrix
        b: vector of n
        tol: slack for nonnegativity and equalities
        equilibria_only: on rank-deficient faces, also require (Ax+b)_j <= v off S

    Returns:
        list of dicts with keys support, x, value, continuum
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = b.size
    if A.shape != (n, n):
        raise DimensionMismatch(f"A has shape {A.shape} but b has {n} entries")
    if n > MAX_ENUMERATION_STRATEGIES:
        raise TooManyStrategies(
            f"Support enumeration visits 2^n - 1 supports; n = {n} exceeds {MAX_ENUMERATION_STRATEGIES}"
        )

    candidates = []
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            idx = list(support)
            continuum = False
            try:
                solution = _solve_support(A, b, support)
            except SingularSupportSystem as e:
                logger.debug("%s, searching the face", e)
                solution = _feasible_face_point(A, b, support, equilibria_only, tol)
                if solution is None:
                    continue
                continuum = True
            else:
                if np.any(solution[:size] < -tol):
                    continue
            x = np.zeros(n)
            x[idx] = np.clip(solution[:size], 0.0, None)
            x /= x.sum()
            candidates.append({"support": support, "x": x, "value": float(solution[size]), "continuum": continuum})
    return candidates


def nash_equilibria_affine(A, b, tol=NE_TOLERANCE):
    """
    Nash equilibria of the affine stationary game F(x) = Ax + b by support enumeration.

    Args:
        A: n x n matrix (n <= 10)
        b: vector of n
        tol: feasibility slack

    Returns:
        NashSet: deduplicated equilibria with their best-response violations
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    points, residuals, flags = [], [], []
    for candidate in face_stationary_points(A, b, tol, equilibria_only=True):
        x = candidate["x"]
        payoff = A @ x + b
        off_support = [j for j in range(b.size) if j not in candidate["support"]]
        slack = FACE_LP_TOLERANCE if candidate["continuum"] else tol
        if off_support and np.max(payoff[off_support]) > candidate["value"] + slack:
            continue
        if any(np.linalg.norm(x - kept) <= DEDUP_RADIUS for kept in points):
            continue
        points.append(x)
        residuals.append(best_response_violation(x, payoff))
        flags.append(candidate["continuum"])

    logger.debug("Support enumeration found %d equilibria (n=%d)", len(points), b.size)
    return NashSet(
        points=tuple(PopulationState(point) for point in points),
        residuals=tuple(residuals),
        continuum_flags=tuple(flags),
    )


def distance_to_set(x, nash_set):
    """
    Euclidean distance from x to the closest stored equilibrium.

    Raises:
        EmptySet: the set has no points
    """
    if len(nash_set) == 0:
        raise EmptySet("Distance to an empty Nash set is undefined")
    x = np.asarray(x, dtype=float)
    return float(np.min(np.linalg.norm(nash_set.as_array() - x, axis=1)))


def face_barycenters(n):
    """All 2^n - 1 face barycenters of the simplex, vertices first."""
    rows = []
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            point = np.zeros(n)
            point[list(support)] = 1.0 / size
            rows.append(point)
    return np.array(rows)


def sample_simplex(n, size, rng, floor=0.0):
    """
    Uniform (Dirichlet(1)) samples of the simplex.

    Args:
        floor: mixing weight with the uniform point; floor > 0 keeps every entry
            at least floor / n away from the boundary
    """
    samples = rng.dirichlet(np.ones(n), size=size)
    if floor > 0:
        samples = (1.0 - floor) * samples + floor / n
    return samples


def simplex_lattice(n, step):
    """Every simplex point whose entries are multiples of step (1/step must be an integer)."""
    resolution = int(round(1.0 / step))
    if resolution < 1 or abs(resolution * step - 1.0) > 1e-12:
        raise InvalidParameter(f"1/step must be a positive integer, got step={step}")
    rows = []
    for combo in itertools.combinations(range(resolution + n - 1), n - 1):
        # stars and bars
        bounds = (-1,) + combo + (resolution + n - 1,)
        counts = [bounds[i + 1] - bounds[i] - 1 for i in range(n)]
        rows.append(np.array(counts, dtype=float) / resolution)
    return np.array(rows)


def sample_simplex_lattice(n, step, size, rng):
    lattice = simplex_lattice(n, step)
    return lattice[rng.integers(0, len(lattice), size=size)]


def sample_payoff_lattice(n, step, bound, size, rng):
    """Payoff vectors with entries in {-bound, -bound + step, ..., bound}."""
    levels = int(round(bound / step))
    return rng.integers(-levels, levels + 1, size=(size, n)) * step
