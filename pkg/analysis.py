"""
Certification and Diagnostics

This module:
1. Keeps the running CCW functional  int p'(t) x(t) dt  and its running minimum
2. Falsifies CCW by fitting a drift to the running minimum of closed-loop runs
3. Runs the negative-imaginary frequency test on the filter block with python-control
4. Turns a trajectory into a convergence verdict and a Barbalat-style diagnostic
5. Combines construction and falsification into one CCW certificate

CCW can only be certified by construction (potential game, plus an NI filter); a
trajectory search can refute it but never prove it.
"""

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import control
import numpy as np
from scipy.integrate import trapezoid

from errors import EmptyTrajectory, InvalidParameter, NonHermitianForm
from payoffs import FILTERED_POTENTIAL, MEMORYLESS
from simplex_core import best_response_violation, distance_to_set

logger = logging.getLogger(__name__)


# ============== CONFIGURATION ==============
DRIFT_THRESHOLD = 1e-3        # running-min slope below -this is a CCW witness
FIT_FRACTION = 0.8            # slope fitted over the last 80% of each run
NI_TOLERANCE = 1e-10
HERMITIAN_TOLERANCE = 1e-12
CLOSED_FORM_TOLERANCE = 1e-9
OMEGA_POINTS = 200
OMEGA_DECADES = 2             # default grid spans [lam / 100, 100 lam]
SPEED_TOLERANCE = 1e-4
DISTANCE_TOLERANCE = 1e-3
CORRELATION_TOLERANCE = 1e-6
TAIL_FRACTION = 0.1
MIN_VERDICT_SAMPLES = 100
# ===========================================

CERTIFIED = "certified-by-construction"
FALSIFIED = "fail"
INCONCLUSIVE = "inconclusive"


# ---------------------------------------------------------------- CCW ledger

@dataclass(frozen=True)
class CCWLedger:
    """
    Running value of int p'x dt along one run.

    bound_estimate is 2 (max ||F||_inf + max f) of the base potential game, NaN when
    there is no potential to build it from.
    """

    running_integral: float = 0.0
    running_min: float = 0.0
    bound_estimate: float = float("nan")


def new_ledger(mech):
    base = mech.base
    if base.has_potential:
        return CCWLedger(bound_estimate=2.0 * (base.sup_norm + base.potential_max))
    return CCWLedger()


def ccw_ledger_step(ledger, x, p_prev, p_next, dt):
    """
    Add one step: (p_next - p_prev)' x_mid, i.e. p' x_mid dt with p' taken as a difference quotient.

    Args:
        ledger: CCWLedger before the step
        x: midpoint state of the step
        p_prev, p_next: payoffs at both ends of the step
        dt: step length, > 0

    Returns:
        CCWLedger
    """
    if not dt > 0:
        raise InvalidParameter(f"Ledger step needs dt > 0, got {dt}")
    change = float((np.asarray(p_next, dtype=float) - np.asarray(p_prev, dtype=float)) @ np.asarray(x, dtype=float))
    total = ledger.running_integral + change
    return replace(ledger, running_integral=total, running_min=min(ledger.running_min, total))


def ccw_envelope(ledger):
    """Measured lower bound on the CCW constant: max(bound_estimate, -running_min)."""
    measured = -ledger.running_min
    if np.isnan(ledger.bound_estimate):
        return measured
    return max(ledger.bound_estimate, measured)


@dataclass(frozen=True)
class CCWFalsification:
    verdict: str                      # "no_witness" or "witness"
    drift_rate: float                 # most negative running-min slope over all starts
    slopes: tuple
    witness_index: Optional[int] = None
    record: Optional[object] = None   # TrajectoryRecord of the witness run

    @property
    def found(self):
        return self.verdict == "witness"


def running_min_slope(times, running_mins, fit_fraction=FIT_FRACTION):
    """Least-squares slope of the running minimum over the last fit_fraction of the run."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(running_mins, dtype=float)
    if times.size < 2:
        return 0.0
    start = times[-1] * (1.0 - fit_fraction)
    mask = times >= start
    if np.count_nonzero(mask) < 2:
        return 0.0
    return float(np.polyfit(times[mask], values[mask], 1)[0])


def ccw_falsify(mech, spec, starts, T, drift_threshold=DRIFT_THRESHOLD, cfg=None, fit_fraction=FIT_FRACTION):
    """
    Search closed-loop runs for unbounded decrease of the CCW functional.

    Args:
        mech: PayoffMechanism
        spec: RuleSpec driving the runs
        starts: initial states
        T: horizon of each run, long enough to cover several periods
        drift_threshold: witness when the fitted slope is below -drift_threshold
        cfg: IntegratorConfig; its t_max is replaced by T

    Returns:
        CCWFalsification
    """
    # engine imports this module for the ledger
    from engine import IntegratorConfig, simulate

    base_cfg = IntegratorConfig() if cfg is None else cfg
    run_cfg = replace(base_cfg, t_max=float(T))
    records = [simulate(spec, mech, x0, run_cfg, label=f"falsify_{index}") for index, x0 in enumerate(starts)]
    return falsify_records(records, drift_threshold, fit_fraction)


def falsify_records(records, drift_threshold=DRIFT_THRESHOLD, fit_fraction=FIT_FRACTION):
    """Drift test over runs that were already integrated."""
    slopes = []
    for record in records:
        slope = running_min_slope(record.times, record.ccw_mins, fit_fraction)
        logger.debug("Run '%s': running-min slope %.3e", record.label, slope)
        slopes.append(slope)

    if not slopes:
        return CCWFalsification("no_witness", 0.0, ())
    worst = int(np.argmin(slopes))
    if slopes[worst] < -drift_threshold:
        logger.info("CCW witness from run '%s': drift %.3e per unit time", records[worst].label, slopes[worst])
        return CCWFalsification("witness", slopes[worst], tuple(slopes), worst, records[worst])
    return CCWFalsification("no_witness", slopes[worst], tuple(slopes))


# ---------------------------------------------------------------- NI frequency test

@dataclass(frozen=True)
class NIReport:
    omega_grid: np.ndarray
    min_eigenvalues: np.ndarray
    verdict: str                        # "pass" or "fail"
    witness_omega: Optional[float] = None
    closed_form_gap: float = 0.0        # max entrywise gap to -2 k lam^2 w/(w^2+lam^2) A

    @property
    def passed(self):
        return self.verdict == "pass"


class FilterParams(NamedTuple):
    """Unvalidated filter parameters, for probing gains a mechanism would refuse."""

    lam: float
    k: float
    A: np.ndarray
    b: np.ndarray


def filter_with_gain(params, k):
    return FilterParams(float(params.lam), float(k), np.asarray(params.A, dtype=float), np.asarray(params.b, dtype=float))


def default_omega_grid(lam, points=OMEGA_POINTS):
    return np.logspace(np.log10(lam) - OMEGA_DECADES, np.log10(lam) + OMEGA_DECADES, points)


def filter_system(params):
    """State-space form of G(s) = k lam s/(s + lam) A from q' = lam(Ax - q), p = k lam (Ax - q)."""
    n = params.b.size
    eye = np.eye(n)
    gain = params.k * params.lam
    return control.ss(-params.lam * eye, params.lam * params.A, -gain * eye, gain * params.A)


def ni_closed_form(params, omega):
    return -2.0 * params.k * params.lam ** 2 * omega / (omega ** 2 + params.lam ** 2) * params.A


def ni_frequency_test(lti, omega_grid=None, tol=NI_TOLERANCE):
    """
    Check j(G(jw) - G*(jw)) >= 0 over a frequency grid.

    Args:
        lti: LTIMechanismState, its LTIParams, or FilterParams
        omega_grid: positive sorted frequencies; default 200 log-spaced points in [lam/100, 100 lam]
        tol: a smallest eigenvalue below -tol fails the test

    Returns:
        NIReport

    Raises:
        NonHermitianForm: the sampled form is not Hermitian
    """
    params = getattr(lti, "params", lti)
    omega = default_omega_grid(params.lam) if omega_grid is None else np.asarray(omega_grid, dtype=float)
    if omega.size == 0 or np.any(omega <= 0) or np.any(np.diff(omega) <= 0):
        raise InvalidParameter("omega_grid must be positive and strictly increasing")

    n = params.b.size
    response = np.asarray(filter_system(params)(1j * omega)).reshape(n, n, omega.size)

    min_eigenvalues = np.empty(omega.size)
    gap = 0.0
    for index, w in enumerate(omega):
        G = response[:, :, index]
        form = 1j * (G - G.conj().T)
        skew = float(np.max(np.abs(form - form.conj().T)))
        if skew > HERMITIAN_TOLERANCE:
            raise NonHermitianForm(f"NI form at omega={w:g} is off Hermitian by {skew:.3e}")
        min_eigenvalues[index] = float(np.min(np.linalg.eigvalsh(form)))
        gap = max(gap, float(np.max(np.abs(form - ni_closed_form(params, w)))))

    if gap > CLOSED_FORM_TOLERANCE:
        logger.warning("NI form deviates from the closed form by %.3e", gap)

    failing = np.flatnonzero(min_eigenvalues < -tol)
    if failing.size:
        witness = float(omega[failing[0]])
        return NIReport(omega, min_eigenvalues, "fail", witness, gap)
    return NIReport(omega, min_eigenvalues, "pass", None, gap)


# ---------------------------------------------------------------- certificate

@dataclass(frozen=True)
class CCWCertificate:
    verdict: str
    reason: str
    ni_report: Optional[NIReport] = None
    falsification: Optional[CCWFalsification] = None


def ccw_certificate(mech, falsification=None, ni_report=None):
    """
    Combine the constructive argument with an optional falsification run.

    Potential base game with no filter, or with a filter that passes the NI test, is
    certified by construction; otherwise a witness makes it fail and its absence
    leaves it inconclusive.
    """
    constructive = False
    reason = "no potential for the base game"
    if mech.base.has_potential:
        if mech.variant == MEMORYLESS:
            constructive, reason = True, "potential game"
        elif mech.variant == FILTERED_POTENTIAL:
            ni_report = ni_report or ni_frequency_test(mech.lti)
            constructive = ni_report.passed
            reason = "potential game plus NI filter" if constructive else (
                f"filter fails the NI test at omega={ni_report.witness_omega:g}"
            )

    if falsification is not None and falsification.found:
        if constructive:
            logger.error("Mechanism '%s' is CCW by construction but produced a drift witness", mech.name)
        return CCWCertificate(FALSIFIED, f"running minimum drifts at {falsification.drift_rate:.3e}",
                              ni_report, falsification)
    if constructive:
        return CCWCertificate(CERTIFIED, reason, ni_report, falsification)
    return CCWCertificate(INCONCLUSIVE, reason, ni_report, falsification)


# ---------------------------------------------------------------- trajectory verdicts

@dataclass(frozen=True)
class ConvergenceVerdict:
    final_speed: float
    final_ne_distance: float
    correlation_tail: float
    converged: bool
    distance_is_upper_bound: bool = False


@dataclass(frozen=True)
class BarbalatDiagnostic:
    integral_of_correlation: float
    correlation_tail_max: float


def _tail(times, fraction=TAIL_FRACTION):
    times = np.asarray(times, dtype=float)
    return times >= times[-1] - fraction * (times[-1] - times[0])


def convergence_verdict(traj, ne, speed_tol=SPEED_TOLERANCE, dist_tol=DISTANCE_TOLERANCE,
                        corr_tol=CORRELATION_TOLERANCE):
    """
    Read the end of a run: final speed, distance to the Nash set and the correlation tail.

    When the Nash set holds a continuum the stored points only sample it, so a final state
    that is itself a best response to its payoff (within dist_tol) also counts as on the set.

    Args:
        traj: TrajectoryRecord
        ne: NashSet of the stationary game

    Returns:
        ConvergenceVerdict
    """
    if len(traj.times) == 0:
        raise EmptyTrajectory(f"Trajectory '{traj.label}' has no samples")
    if len(traj.times) < MIN_VERDICT_SAMPLES:
        logger.warning("Trajectory '%s' has only %d samples", traj.label, len(traj.times))

    final_speed = float(traj.speeds[-1])
    distance = distance_to_set(traj.states[-1], ne)
    tail = float(np.max(traj.correlations[_tail(traj.times)]))
    on_set = distance <= dist_tol
    if not on_set and ne.continuum:
        on_set = best_response_violation(traj.states[-1], traj.payoffs[-1]) <= dist_tol
    converged = final_speed <= speed_tol and on_set and tail <= corr_tol
    return ConvergenceVerdict(final_speed, distance, tail, converged, ne.continuum)


def barbalat_diagnostic(traj):
    """Trapezoid integral of the correlation and its max over the last 10% of the horizon."""
    if len(traj.times) < 2:
        tail = float(traj.correlations[-1]) if len(traj.times) else 0.0
        return BarbalatDiagnostic(0.0, tail)
    integral = float(trapezoid(traj.correlations, traj.times))
    tail = float(np.max(traj.correlations[_tail(traj.times)]))
    return BarbalatDiagnostic(integral, tail)
