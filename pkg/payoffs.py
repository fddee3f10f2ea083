"""
Payoff Mechanisms

This module:
1. Builds memoryless games (affine or custom) and, when one exists, their potential
2. Builds the filtered mechanism  q' = lam (Ax + b - q),  p = F(x) + k lam (Ax + b - q)
   on top of a potential game, including the two specialisations
   (k = 1 with A < 0, and k = -1/lam^2 with A >= 0)
3. Exposes the uniform interface used by the engine: evaluate, state_derivative,
   stationary_game, payoff_bound
4. Checks the potential path-integral identity  f(x(T)) - f(x(0)) = int x'(t) F(x(t)) dt

Mechanism parameters are immutable. The filter state q belongs to one simulation:
the engine integrates it together with x and never shares it between runs.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from errors import DimensionMismatch, InvalidMechanism, InvalidParameter, NoPotentialAvailable
from simplex_core import PayoffVector, face_stationary_points

logger = logging.getLogger(__name__)


# ============== CONFIGURATION ==============
SYMMETRY_TOLERANCE = 1e-12    # A = A' within this
EIGEN_TOLERANCE = 1e-10       # k A <= 0 within this
TANGENT_TOLERANCE = 1e-10     # P (A - A') P = 0 within this
MIN_PATH_SAMPLES = 100
# ===========================================

MEMORYLESS = "memoryless"
FILTERED_POTENTIAL = "filtered_potential"


def _matrix(values, n, name):
    arr = np.array(values, dtype=float)
    if arr.shape != (n, n):
        raise DimensionMismatch(f"{name} must be {n}x{n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} has non-finite entries")
    return arr


def _vector(values, n, name):
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size != n:
        raise DimensionMismatch(f"{name} must have {n} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameter(f"{name} has non-finite entries")
    return arr


def tangent_projector(n):
    return np.eye(n) - np.full((n, n), 1.0 / n)


def is_tangent_symmetric(A, tol=TANGENT_TOLERANCE):
    """(w-x)'(A - A')(v-x) = 0 for all simplex points: the affine potential-game criterion."""
    A = np.asarray(A, dtype=float)
    projector = tangent_projector(A.shape[0])
    return bool(np.max(np.abs(projector @ (A - A.T) @ projector)) <= tol)


# ---------------------------------------------------------------- games

@dataclass(frozen=True, eq=False)
class AffinePayoff:
    A: np.ndarray
    b: np.ndarray

    def __call__(self, x):
        return self.A @ np.asarray(x, dtype=float) + self.b


@dataclass(frozen=True, eq=False)
class QuadraticPotential:
    """f(x) = 1/2 x'Mx + c'x - shift."""

    M: np.ndarray
    c: np.ndarray
    shift: float = 0.0

    def raw(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.M @ x + self.c @ x)

    def __call__(self, x):
        return self.raw(x) - self.shift


@dataclass(frozen=True, eq=False)
class MemorylessGame:
    """
    Memoryless payoff map F on the simplex, optionally with a potential f >= 0.

    sup_norm is max over the simplex of ||F(x)||_inf and potential_max the max of f;
    both are exact for affine games and supplied by the caller for custom ones.
    """

    payoff_fn: Callable
    n: int
    potential_fn: Optional[Callable] = None
    sup_norm: float = float("nan")
    potential_max: Optional[float] = None
    A: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    name: str = "game"

    @property
    def has_potential(self):
        return self.potential_fn is not None

    @property
    def is_affine(self):
        return self.A is not None


def affine_game(A, b, name="affine"):
    """
    Game F(x) = Ax + b. A potential exists iff A is symmetric on the simplex tangent space.

    The potential is f(x) = 1/2 x'(PAP)x + (b + A 1/n)'x, shifted so that its minimum
    over the simplex is 0; both extremes come from the face stationary points of its
    gradient, so they are exact.

    Args:
        A: n x n matrix
        b: vector of n
        name: label used in reports

    Returns:
        MemorylessGame
    """
    b = np.array(b, dtype=float).reshape(-1)
    n = b.size
    A = _matrix(A, n, "A")
    b = _vector(b, n, "b")
    payoff = AffinePayoff(A, b)
    vertices_norm = float(np.max(np.abs(A + b[:, None]))) if n else 0.0

    potential = None
    potential_max = None
    if is_tangent_symmetric(A):
        projector = tangent_projector(n)
        M = projector @ A @ projector
        M = 0.5 * (M + M.T)
        c = b + A @ np.full(n, 1.0 / n)
        candidate = QuadraticPotential(M, c)
        values = [candidate.raw(point["x"]) for point in face_stationary_points(M, c)]
        low, high = min(values), max(values)
        potential = replace(candidate, shift=low)
        potential_max = high - low
    else:
        logger.debug("Game '%s' is not a potential game (A not tangent-symmetric)", name)

    return MemorylessGame(
        payoff_fn=payoff,
        n=n,
        potential_fn=potential,
        sup_norm=vertices_norm,
        potential_max=potential_max,
        A=A,
        b=b,
        name=name,
    )


def custom_game(payoff_fn, n, sup_norm, potential_fn=None, potential_max=None, name="custom"):
    """
    Game from a caller-supplied Lipschitz map. Lipschitz continuity and the bounds are trusted.

    Args:
        payoff_fn: callable x -> vector of n
        sup_norm: bound on ||F(x)||_inf over the simplex
        potential_fn: optional callable x -> float, >= 0 on the simplex
        potential_max: bound on the potential over the simplex
    """
    if not np.isfinite(sup_norm) or sup_norm < 0:
        raise InvalidMechanism(f"Custom game '{name}' needs a finite payoff bound, got {sup_norm}")
    if potential_fn is not None and potential_max is None:
        raise InvalidMechanism(f"Custom game '{name}' declares a potential but no potential_max")
    return MemorylessGame(
        payoff_fn=payoff_fn, n=n, potential_fn=potential_fn, sup_norm=float(sup_norm),
        potential_max=potential_max, name=name,
    )


def potential_value(game, x):
    """
    f(x) for a potential game.

    Raises:
        NoPotentialAvailable: the game has no potential
    """
    if not game.has_potential:
        raise NoPotentialAvailable(f"Game '{game.name}' has no potential")
    return float(game.potential_fn(np.asarray(x, dtype=float)))


def line_integral(game, path):
    """Trapezoid rule for int x'(t) F(x(t)) dt along sampled path points (m x n)."""
    path = np.asarray(path, dtype=float)
    payoffs = np.array([game.payoff_fn(point) for point in path])
    steps = np.diff(path, axis=0)
    return float(np.sum(steps * 0.5 * (payoffs[1:] + payoffs[:-1])))


def verify_potential_identity(game, path, quad_tol, potential_fn=None):
    """
    Check f(end) - f(start) = int x'F(x) dt along a sampled path.

    Args:
        game: MemorylessGame
        path: m x n array of simplex points, m >= 100
        quad_tol: accepted quadrature gap
        potential_fn: candidate potential; defaults to the game's own

    Returns:
        bool
    """
    candidate = potential_fn if potential_fn is not None else game.potential_fn
    if candidate is None:
        raise NoPotentialAvailable(f"Game '{game.name}' has no potential to verify")
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[0] < MIN_PATH_SAMPLES:
        raise InvalidParameter(f"Path needs at least {MIN_PATH_SAMPLES} samples, got shape {path.shape}")
    change = float(candidate(path[-1])) - float(candidate(path[0]))
    return abs(change - line_integral(game, path)) <= quad_tol


# ---------------------------------------------------------------- filtered mechanism

@dataclass(frozen=True, eq=False)
class LTIParams:
    lam: float
    k: float
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam <= 0:
            raise InvalidMechanism(f"Filter rate lambda must be > 0, got {self.lam}")
        if not np.isfinite(self.k):
            raise InvalidMechanism(f"Gain k must be finite, got {self.k}")
        if np.max(np.abs(self.A - self.A.T)) > SYMMETRY_TOLERANCE:
            raise InvalidMechanism("Filter matrix A must be symmetric")
        top = float(np.max(np.linalg.eigvalsh(self.k * self.A))) if self.A.size else 0.0
        if top > EIGEN_TOLERANCE:
            raise InvalidMechanism(
                f"k A must be negative semidefinite (k={self.k:g}, largest eigenvalue of kA = {top:.3e})"
            )


@dataclass(eq=False)
class LTIMechanismState:
    """Filter parameters plus the internal state q (starts at 0)."""

    params: LTIParams
    q: np.ndarray = None

    def __post_init__(self):
        if self.q is None:
            self.q = np.zeros(self.params.b.size)


@dataclass(eq=False)
class PayoffMechanism:
    variant: str
    base: MemorylessGame
    lti: Optional[LTIMechanismState] = None
    beta_bound: float = float("nan")
    name: str = field(default="mechanism")

    @property
    def n(self):
        return self.base.n

    @property
    def state_size(self):
        return 0 if self.lti is None else self.lti.q.size

    def initial_state(self):
        return np.zeros(self.state_size)

    def fresh(self):
        """Copy with the filter state reset to zero (parameters shared)."""
        lti = None if self.lti is None else LTIMechanismState(self.lti.params)
        return PayoffMechanism(self.variant, self.base, lti, self.beta_bound, self.name)


def memoryless_mechanism(game, name=None):
    return PayoffMechanism(MEMORYLESS, game, None, float(game.sup_norm), name or game.name)


def filtered_potential_mechanism(base, lam, k, A, b, name="filtered_potential"):
    """
    Potential game plus the filtered perturbation k lam (Ax + b - q).

    Args:
        base: potential MemorylessGame (the stationary game)
        lam: filter rate, > 0
        k: gain with k A negative semidefinite
        A: symmetric n x n matrix
        b: offset vector (its effect decays like exp(-lam t))

    Raises:
        InvalidMechanism: base has no potential, or the filter parameters are invalid
    """
    if not base.has_potential:
        raise InvalidMechanism(f"Base game '{base.name}' must be a potential game")
    params = LTIParams(float(lam), float(k), _matrix(A, base.n, "lti_A"), _vector(b, base.n, "lti_b"))
    mech = PayoffMechanism(FILTERED_POTENTIAL, base, LTIMechanismState(params), name=name)
    mech.beta_bound = _filtered_bound(base, params)
    return mech


def contractive_filter_mechanism(A, b, lam, name="contractive_filter"):
    """k = 1 and F(x) = Ax + b with A negative definite."""
    A = np.asarray(A, dtype=float)
    if np.max(np.linalg.eigvalsh(0.5 * (A + A.T))) >= 0:
        raise InvalidMechanism("The k = 1 specialisation needs A negative definite")
    return filtered_potential_mechanism(affine_game(A, b, name=f"{name}_game"), lam, 1.0, A, b, name=name)


def coordination_filter_mechanism(A, b, lam, name="coordination_filter"):
    """k = -1/lam^2 and F(x) = (Ax + b)/lam; k A <= 0 then forces A positive semidefinite."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    base = affine_game(A / lam, b / lam, name=f"{name}_game")
    return filtered_potential_mechanism(base, lam, -1.0 / lam ** 2, A, b, name=name)


def _filtered_bound(base, params):
    a_norm = float(np.linalg.norm(params.A, np.inf)) if params.A.size else 0.0
    b_norm = float(np.max(np.abs(params.b))) if params.b.size else 0.0
    # q low-passes Ax + b from q(0) = 0, so |q| never exceeds |Ax + b|
    q_bound = a_norm + b_norm
    return float(base.sup_norm + abs(params.k * params.lam) * (a_norm + b_norm + q_bound))


# ---------------------------------------------------------------- uniform interface

def _q(mech, q):
    if mech.lti is None:
        return None
    return mech.lti.q if q is None else np.asarray(q, dtype=float)


def payoff_array(mech, x, q=None):
    """Array form of evaluate(); q defaults to the mechanism's stored state."""
    x = np.asarray(x, dtype=float)
    if x.size != mech.n:
        raise DimensionMismatch(f"Mechanism '{mech.name}' has {mech.n} strategies, state has {x.size}")
    p = np.asarray(mech.base.payoff_fn(x), dtype=float)
    if mech.lti is not None:
        params = mech.lti.params
        p = p + params.k * params.lam * (params.A @ x + params.b - _q(mech, q))
    return p


def evaluate(mech, x, q=None):
    """Memoryless: F(x).  Filtered: F(x) + k lam (Ax + b - q)."""
    return PayoffVector(payoff_array(mech, x, q))


def state_derivative(mech, x, q=None):
    """lam (Ax + b - q) for the filtered mechanism, an empty vector otherwise."""
    if mech.lti is None:
        return np.zeros(0)
    params = mech.lti.params
    return params.lam * (params.A @ np.asarray(x, dtype=float) + params.b - _q(mech, q))


def stationary_game(mech):
    """The memoryless map the mechanism settles to when x stops moving (the base game)."""
    return mech.base.payoff_fn


def payoff_bound(mech):
    """Uniform bound beta on ||p(t)||_inf along any closed-loop run."""
    return mech.beta_bound
