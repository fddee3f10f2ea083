"""
Learning Rules

This module:
1. Implements the canonical switch-rate forms: pairwise comparison (Smith, exponential),
   excess payoff (BNN, ABR, squared) and imitation (replicator, squared)
2. Combines them into hybrid rules (RuleSpec), including nested mixtures of hybrids
3. Computes the EDM vector field, the correlation function p'V and its Tellegen pair-sum form
4. Samples positive correlation, Nash stationarity, the Tellegen identity and the
   imitation monotonicity condition, returning witnesses when a property fails
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from errors import DimensionMismatch, InvalidParameter, InvalidRuleSpec
from simplex_core import (
    face_barycenters,
    is_best_response,
    sample_payoff_lattice,
    sample_simplex,
    sample_simplex_lattice,
)

logger = logging.getLogger(__name__)


# ============== CONFIGURATION ==============
ZERO_TOLERANCE = 1e-9       # separates exact zeros of p'V and V from generic values
SIGN_TOLERANCE = 1e-12      # p'V >= -SIGN_TOLERANCE counts as nonnegative
TELLEGEN_TOLERANCE = 1e-10
DEFAULT_SAMPLES = 10_000
STATE_LATTICE_STEP = 0.1    # lattice samples keep p'V away from round-off
PAYOFF_LATTICE_STEP = 0.5
PAYOFF_BOUND = 2.0
# ===========================================


class IRule(Enum):
    REPLICATOR = "replicator"
    SQUARED = "squared"


class CORule(Enum):
    SMITH = "smith"
    EXPONENTIAL = "exponential"


class EPRule(Enum):
    BNN = "bnn"
    ABR = "abr"
    SQUARED = "squared"


def _pair(x, p):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != p.shape:
        raise DimensionMismatch(f"State has {x.size} strategies but payoff has {p.size}")
    return x, p


def _gains(p):
    # gains[i, j] = [p_j - p_i]_+
    return np.maximum(p[None, :] - p[:, None], 0.0)


def _positive_excess(x, p):
    return np.maximum(p - p @ x, 0.0)


def _column_constant(row):
    return np.tile(row, (row.size, 1))


# ---------------------------------------------------------------- canonical forms

def smith_rates(x, p):
    """rates[i][j] = [p_j - p_i]_+ (independent of x)."""
    _, p = _pair(x, p)
    return _gains(p)


def exponential_comparison_rates(x, p):
    """rates[i][j] = 3 j (exp([p_j - p_i]_+) - 1) with j counted from 1."""
    _, p = _pair(x, p)
    weights = 3.0 * np.arange(1, p.size + 1)
    return np.expm1(_gains(p)) * weights[None, :]


def bnn_rates(x, p):
    """rates[i][j] = [p_hat_j]_+ for every row i."""
    x, p = _pair(x, p)
    return _column_constant(_positive_excess(x, p))


def _check_abr(k, eps):
    if int(k) != k or k < 1:
        raise InvalidParameter(f"ABR exponent k must be a positive integer, got {k}")
    if not 0.0 < eps < 1.0:
        raise InvalidParameter(f"ABR eps must lie in (0, 1), got {eps}")


def abr_rates(x, p, k, eps):
    """
    Approximate best response: rates[i][j] = [p_hat_j]_+^k / (sum_l [p_hat_l]_+^k + eps^k).

    Args:
        k: positive integer, larger k is closer to best response
        eps: real in (0, 1)
    """
    _check_abr(k, eps)
    x, p = _pair(x, p)
    powered = _positive_excess(x, p) ** int(k)
    return _column_constant(powered / (powered.sum() + eps ** int(k)))


def squared_excess_rates(x, p):
    """rates[i][j] = 4 [p_hat_j]_+^2."""
    x, p = _pair(x, p)
    return _column_constant(4.0 * _positive_excess(x, p) ** 2)


def replicator_psi(x, p):
    _, p = _pair(x, p)
    return _gains(p)


def squared_psi(x, p):
    _, p = _pair(x, p)
    return 2.0 * _gains(p) ** 2


def replicator_rates(x, p):
    """rates[i][j] = x_j [p_j - p_i]_+."""
    x, p = _pair(x, p)
    return x[None, :] * _gains(p)


def squared_imitation_rates(x, p):
    """rates[i][j] = 2 x_j [p_j - p_i]_+^2."""
    x, p = _pair(x, p)
    return x[None, :] * squared_psi(x, p)


_I_FORMS = {IRule.REPLICATOR: replicator_rates, IRule.SQUARED: squared_imitation_rates}
_CO_FORMS = {CORule.SMITH: smith_rates, CORule.EXPONENTIAL: exponential_comparison_rates}


# ---------------------------------------------------------------- hybrid rules

@dataclass(frozen=True)
class RuleSpec:
    """
    Hybrid rule alpha_I T^I + alpha_CO T^CO + alpha_EP T^EP + alpha_tilde T~ (+ mixture).

    mixture holds (weight, RuleSpec) pairs added on top of the own components, so a
    combination of hybrids such as 0.2 T^a + 3 T^b + 40 T^c stays a single spec.
    user_rule(x, p) must return an n x n nonnegative matrix and is trusted to satisfy (PC).
    bypass_cone skips the alpha_CO + alpha_EP > 0 check (test harness only).
    """

    alpha_I: float = 0.0
    alpha_CO: float = 0.0
    alpha_EP: float = 0.0
    alpha_tilde: float = 0.0
    i_rule: IRule = IRule.REPLICATOR
    co_rule: CORule = CORule.SMITH
    ep_rule: EPRule = EPRule.BNN
    abr_k: int = 1
    abr_eps: float = 0.1
    user_rule: Optional[Callable] = field(default=None, compare=False)
    mixture: tuple = ()
    name: str = "custom"
    bypass_cone: bool = False

    def __post_init__(self):
        for label in ("alpha_I", "alpha_CO", "alpha_EP", "alpha_tilde"):
            value = getattr(self, label)
            if not np.isfinite(value) or value < 0:
                raise InvalidRuleSpec(f"Rule '{self.name}': weight {label} must be finite and >= 0, got {value}")
        object.__setattr__(self, "i_rule", IRule(self.i_rule))
        object.__setattr__(self, "co_rule", CORule(self.co_rule))
        object.__setattr__(self, "ep_rule", EPRule(self.ep_rule))
        if self.ep_rule is EPRule.ABR and self.alpha_EP > 0:
            try:
                _check_abr(self.abr_k, self.abr_eps)
            except InvalidParameter as e:
                raise InvalidRuleSpec(f"Rule '{self.name}': {e}") from e
        if self.alpha_tilde > 0 and self.user_rule is None:
            raise InvalidRuleSpec(f"Rule '{self.name}': alpha_tilde > 0 needs a user_rule")
        for weight, sub in self.mixture:
            if not isinstance(sub, RuleSpec):
                raise InvalidRuleSpec(f"Rule '{self.name}': mixture entries must be RuleSpec, got {type(sub)}")
            if not np.isfinite(weight) or weight < 0:
                raise InvalidRuleSpec(f"Rule '{self.name}': mixture weight must be >= 0, got {weight}")
        weights = self.cone_weights()
        if not self.bypass_cone and weights["CO"] + weights["EP"] <= 0:
            raise InvalidRuleSpec(
                f"Rule '{self.name}' violates the hybrid-cone constraint alpha_CO + alpha_EP > 0 "
                f"(alpha_I={weights['I']}, alpha_CO={weights['CO']}, alpha_EP={weights['EP']})"
            )

    def cone_weights(self):
        """Effective class weights, mixtures included."""
        totals = {"I": self.alpha_I, "CO": self.alpha_CO, "EP": self.alpha_EP, "tilde": self.alpha_tilde}
        for weight, sub in self.mixture:
            for key, value in sub.cone_weights().items():
                totals[key] += weight * value
        return totals

    def describe(self):
        if self.mixture:
            return " + ".join(f"{w:g}*{sub.name}" for w, sub in self.mixture)
        parts = []
        if self.alpha_I:
            parts.append(f"{self.alpha_I:g}*I[{self.i_rule.value}]")
        if self.alpha_CO:
            parts.append(f"{self.alpha_CO:g}*CO[{self.co_rule.value}]")
        if self.alpha_EP:
            label = self.ep_rule.value
            if self.ep_rule is EPRule.ABR:
                label += f"(k={self.abr_k},eps={self.abr_eps:g})"
            parts.append(f"{self.alpha_EP:g}*EP[{label}]")
        if self.alpha_tilde:
            parts.append(f"{self.alpha_tilde:g}*user")
        return " + ".join(parts) or "0"


def _ep_rates(spec, x, p):
    if spec.ep_rule is EPRule.BNN:
        return bnn_rates(x, p)
    if spec.ep_rule is EPRule.ABR:
        return abr_rates(x, p, spec.abr_k, spec.abr_eps)
    return squared_excess_rates(x, p)


def _user_rates(spec, x, p):
    rates = np.asarray(spec.user_rule(x, p), dtype=float)
    if rates.shape != (x.size, x.size):
        raise DimensionMismatch(f"user_rule of '{spec.name}' returned shape {rates.shape}, expected {(x.size, x.size)}")
    return rates


def component_terms(spec, x, p):
    """
    Weighted pieces of a hybrid rule.

    Returns:
        list of (weight, label, rate matrix or RuleSpec) - RuleSpec entries are mixture members
    """
    x, p = _pair(x, p)
    terms = []
    if spec.alpha_I:
        terms.append((spec.alpha_I, "I", _I_FORMS[spec.i_rule](x, p)))
    if spec.alpha_CO:
        terms.append((spec.alpha_CO, "CO", _CO_FORMS[spec.co_rule](x, p)))
    if spec.alpha_EP:
        terms.append((spec.alpha_EP, "EP", _ep_rates(spec, x, p)))
    if spec.alpha_tilde:
        terms.append((spec.alpha_tilde, "tilde", _user_rates(spec, x, p)))
    for weight, sub in spec.mixture:
        terms.append((weight, sub.name, sub))
    return terms


def hybrid_rates(spec, x, p):
    """Elementwise conic combination of the component rate matrices."""
    x, p = _pair(x, p)
    rates = np.zeros((x.size, x.size))
    for weight, _, term in component_terms(spec, x, p):
        if weight == 0:
            continue
        if isinstance(term, RuleSpec):
            term = hybrid_rates(term, x, p)
        rates += weight * term
    return rates


# ---------------------------------------------------------------- EDM and correlation

@dataclass(frozen=True)
class VectorField:
    """dx/dt of the proportions; entries sum to zero."""

    velocity: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.velocity, dtype=dtype)


def field_from_rates(rates, x):
    """V_i = sum_j x_j T_ji - x_i sum_j T_ij (the diagonal cancels)."""
    return rates.T @ x - x * rates.sum(axis=1)


def edm_velocity(spec, x, p):
    x, p = _pair(x, p)
    return field_from_rates(hybrid_rates(spec, x, p), x)


def edm_field(spec, x, p):
    """Net flow of agents into each strategy under the rule."""
    return VectorField(edm_velocity(spec, x, p))


def _flatten(spec, scale, pieces):
    # key -> [weight, spec]; equal forms from different mixture members share one entry
    own = (
        (spec.alpha_I, ("I", spec.i_rule)),
        (spec.alpha_CO, ("CO", spec.co_rule)),
        (spec.alpha_EP, ("EP", spec.ep_rule, spec.abr_k, spec.abr_eps)
                        if spec.ep_rule is EPRule.ABR else ("EP", spec.ep_rule)),
        (spec.alpha_tilde, ("tilde", id(spec.user_rule))),
    )
    for weight, key in own:
        if weight:
            entry = pieces.setdefault(key, [0.0, spec])
            entry[0] += scale * weight
    for weight, sub in spec.mixture:
        if weight:
            _flatten(sub, scale * weight, pieces)
    return pieces


class CompiledRule:
    """
    A hybrid rule flattened for repeated evaluation on float arrays of matching shape.

    Mixtures are multiplied through and column-constant (excess payoff) pieces are
    added as one broadcast row. velocity(x, p) equals edm_velocity(spec, x, p).
    """

    def __init__(self, spec):
        self.spec = spec
        self.name = spec.name
        self.pieces = [(weight, key, member) for key, (weight, member)
                       in _flatten(spec, 1.0, {}).items() if weight]

    def rates(self, x, p):
        gains = _gains(p)
        full = np.zeros((x.size, x.size))
        row = np.zeros(x.size)
        excess = None
        for weight, key, member in self.pieces:
            kind, form = key[0], key[1]
            if kind == "I":
                psi = gains if form is IRule.REPLICATOR else 2.0 * gains ** 2
                full += weight * (x[None, :] * psi)
            elif kind == "CO":
                if form is CORule.SMITH:
                    full += weight * gains
                else:
                    full += weight * (np.expm1(gains) * (3.0 * np.arange(1, x.size + 1))[None, :])
            elif kind == "EP":
                excess = _positive_excess(x, p) if excess is None else excess
                if form is EPRule.BNN:
                    row += weight * excess
                elif form is EPRule.SQUARED:
                    row += weight * 4.0 * excess ** 2
                else:
                    k = int(member.abr_k)
                    powered = excess ** k
                    row += weight * powered / (powered.sum() + member.abr_eps ** k)
            else:
                full += weight * _user_rates(member, x, p)
        return full + row[None, :]

    def velocity(self, x, p):
        return field_from_rates(self.rates(x, p), x)


def correlation(spec, x, p):
    """p'V(x, p)."""
    x, p = _pair(x, p)
    return float(p @ edm_velocity(spec, x, p))


def tellegen_decomposition(spec, x, p):
    """1/2 sum_ij (p_j - p_i)(x_i T_ij - x_j T_ji); equals correlation() identically."""
    x, p = _pair(x, p)
    flows = x[:, None] * hybrid_rates(spec, x, p)
    net = flows - flows.T
    potential_gap = p[None, :] - p[:, None]
    return float(0.5 * np.sum(potential_gap * net))


def component_correlations(spec, x, p):
    """
    Correlation of every weighted piece of the rule.

    Returns:
        list of (weight, label, correlation); sum of weight * correlation is correlation(spec, x, p)
    """
    x, p = _pair(x, p)
    result = []
    for weight, label, term in component_terms(spec, x, p):
        if isinstance(term, RuleSpec):
            value = correlation(term, x, p)
        else:
            value = float(p @ field_from_rates(term, x))
        result.append((weight, label, value))
    return result


def imitation_monotonicity_holds(psi, x, p, tol=0.0):
    """
    Check p_j >= p_i  <=>  psi_kj - psi_jk >= psi_ki - psi_ik for every i, j, k.

    Args:
        psi: callable (x, p) -> n x n matrix, or the matrix itself

    Returns:
        bool
    """
    x, p = _pair(x, p)
    matrix = np.asarray(psi(x, p) if callable(psi) else psi, dtype=float)
    net = matrix - matrix.T                      # net[k, j] = psi_kj - psi_jk
    prefers = p[None, :] >= p[:, None] - tol     # prefers[i, j] = p_j >= p_i
    ordered = net[:, None, :] >= net[:, :, None] - tol  # ordered[k, i, j]
    return bool(np.all(ordered == prefers[None, :, :]))


# ---------------------------------------------------------------- presets

def preset_rule(name):
    """
    Named rules: bnn, smith, abr, replicator (cone bypassed) and the four hybrids below.

    squared_hybrid = 2 x_j [p_j-p_i]_+^2 + 3 j (e^[p_j-p_i]_+ - 1) + 4 [p_hat_j]_+^2
    replicator_smith = x_j [p_j-p_i]_+ + 0.01 [p_j-p_i]_+
    smith_abr = 0.01 [p_j-p_i]_+ + ABR(k=5, eps=0.1)
    blended_hybrid = 0.2 squared_hybrid + 3 replicator_smith + 40 smith_abr
    """
    builders = {
        "bnn": lambda: RuleSpec(alpha_EP=1.0, ep_rule=EPRule.BNN, name="bnn"),
        "smith": lambda: RuleSpec(alpha_CO=1.0, co_rule=CORule.SMITH, name="smith"),
        "abr": lambda: RuleSpec(alpha_EP=1.0, ep_rule=EPRule.ABR, abr_k=5, abr_eps=0.1, name="abr"),
        "replicator": lambda: RuleSpec(alpha_I=1.0, name="replicator", bypass_cone=True),
        "squared_hybrid": lambda: RuleSpec(
            alpha_I=1.0, alpha_CO=1.0, alpha_EP=1.0,
            i_rule=IRule.SQUARED, co_rule=CORule.EXPONENTIAL, ep_rule=EPRule.SQUARED,
            name="squared_hybrid",
        ),
        "replicator_smith": lambda: RuleSpec(alpha_I=1.0, alpha_CO=0.01, name="replicator_smith"),
        "smith_abr": lambda: RuleSpec(
            alpha_CO=0.01, alpha_EP=1.0, ep_rule=EPRule.ABR, abr_k=5, abr_eps=0.1, name="smith_abr"
        ),
        "blended_hybrid": lambda: RuleSpec(
            mixture=((0.2, preset_rule("squared_hybrid")), (3.0, preset_rule("replicator_smith")), (40.0, preset_rule("smith_abr"))),
            name="blended_hybrid",
        ),
    }
    if name not in builders:
        raise InvalidRuleSpec(f"Unknown rule preset '{name}'. Available: {sorted(builders)}")
    return builders[name]()


PRESET_NAMES = ("bnn", "smith", "abr", "replicator", "squared_hybrid", "replicator_smith", "smith_abr", "blended_hybrid")


# ---------------------------------------------------------------- samplers

@dataclass(frozen=True)
class SamplerReport:
    property: str
    verdict: str            # "pass" or "fail"
    samples: int
    witness: Optional[dict] = None

    @property
    def passed(self):
        return self.verdict == "pass"


def _lattice_samples(n, samples, rng, with_faces=True):
    states = sample_simplex_lattice(n, STATE_LATTICE_STEP, samples, rng)
    if with_faces:
        states = np.vstack([face_barycenters(n), states])
    payoffs = sample_payoff_lattice(n, PAYOFF_LATTICE_STEP, PAYOFF_BOUND, len(states), rng)
    return states, payoffs


def _witness(x, p, **values):
    return {"x": np.round(x, 12).tolist(), "p": np.round(p, 12).tolist(), **values}


def sample_positive_correlation(spec, n, samples=DEFAULT_SAMPLES, rng=None,
                                zero_tol=ZERO_TOLERANCE, sign_tol=SIGN_TOLERANCE):
    """
    Sample (PC): p'V >= 0 everywhere, and p'V = 0 exactly where V = 0.

    The sign is checked on continuous samples and lattice samples, the zero
    equivalence on lattice samples (where zeros are exact).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    continuous_x = sample_simplex(n, samples, rng)
    continuous_p = rng.uniform(-PAYOFF_BOUND, PAYOFF_BOUND, size=(samples, n))
    for x, p in zip(continuous_x, continuous_p):
        value = correlation(spec, x, p)
        if value < -sign_tol:
            return SamplerReport("positive_correlation", "fail", samples, _witness(x, p, correlation=value))

    lattice_x, lattice_p = _lattice_samples(n, samples, rng)
    for x, p in zip(lattice_x, lattice_p):
        velocity = edm_velocity(spec, x, p)
        value = float(p @ velocity)
        speed = float(np.max(np.abs(velocity)))
        if value < -sign_tol or (value <= zero_tol) != (speed <= zero_tol):
            return SamplerReport(
                "positive_correlation", "fail", samples,
                _witness(x, p, correlation=value, speed=speed),
            )
    return SamplerReport("positive_correlation", "pass", samples)


def sample_nash_stationarity(spec, n, samples=DEFAULT_SAMPLES, rng=None, zero_tol=ZERO_TOLERANCE):
    """Sample (NS): p'V <= tol exactly when x is a best response to p (vertices and barycenters included)."""
    rng = np.random.default_rng(1) if rng is None else rng
    states, payoffs = _lattice_samples(n, samples, rng)
    # each face barycenter against a few extra payoffs
    extra_p = sample_payoff_lattice(n, PAYOFF_LATTICE_STEP, PAYOFF_BOUND, 4 * len(face_barycenters(n)), rng)
    extra_x = np.repeat(face_barycenters(n), 4, axis=0)
    for x, p in zip(np.vstack([extra_x, states]), np.vstack([extra_p, payoffs])):
        value = correlation(spec, x, p)
        best = is_best_response(x, p, zero_tol)
        if (value <= zero_tol) != best:
            return SamplerReport(
                "nash_stationarity", "fail", samples,
                _witness(x, p, correlation=value, best_response=best),
            )
    return SamplerReport("nash_stationarity", "pass", samples)


def sample_tellegen(spec, n, samples=DEFAULT_SAMPLES, rng=None, tol=TELLEGEN_TOLERANCE):
    """Compare p'V with the Tellegen pair sum on continuous samples."""
    rng = np.random.default_rng(2) if rng is None else rng
    states = sample_simplex(n, samples, rng)
    payoffs = rng.uniform(-1.0, 1.0, size=(samples, n))
    worst = 0.0
    for x, p in zip(states, payoffs):
        gap = abs(correlation(spec, x, p) - tellegen_decomposition(spec, x, p))
        worst = max(worst, gap)
        if gap > tol:
            return SamplerReport("tellegen_identity", "fail", samples, _witness(x, p, gap=gap))
    logger.debug("Tellegen identity for '%s': worst gap %.3e", spec.name, worst)
    return SamplerReport("tellegen_identity", "pass", samples)
