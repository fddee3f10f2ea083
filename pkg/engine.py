"""
Closed-Loop Integration

This module:
1. Evaluates the joint right-hand side of the rule and the payoff mechanism in (x, q)
2. Integrates it with fixed-step RK4 (default) or scipy's adaptive RK45 stepper,
   projecting the x block back onto the simplex after every step
3. Records times, states, payoffs, speeds, correlations and the CCW ledger online
4. Runs batches of (rule, initial state) pairs with per-run error isolation
5. Exports a trajectory as CSV through pandas
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.integrate import RK45

from analysis import ccw_ledger_step, new_ledger
from errors import DimensionMismatch, EvodynError, IntegratorFailure, InvalidParameter
from payoffs import payoff_array, state_derivative
from rules import CompiledRule, VectorField
from simplex_core import DRIFT_BOUND, project_array, project_to_simplex

logger = logging.getLogger(__name__)


# ============== CONFIGURATION ==============
RK4_FIXED = "rk4_fixed"
RK45_ADAPTIVE = "rk45_adaptive"
METHODS = (RK4_FIXED, RK45_ADAPTIVE)
STOP_CORRELATION = 1e-9       # early stop also needs p'V at most this
MIN_STEP = 1e-12              # rk45 step below this counts as a collapse
CSV_FLOAT_FORMAT = "%.17g"
# ===========================================


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = RK4_FIXED
    dt: float = 1e-3
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    t_max: float = 50.0
    stop_speed: float = 1e-9
    record_stride: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameter(f"Unknown integrator method '{self.method}'. Available: {list(METHODS)}")
        if not self.dt > 0:
            raise InvalidParameter(f"dt must be > 0, got {self.dt}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise InvalidParameter(f"Tolerances must be > 0, got rel_tol={self.rel_tol}, abs_tol={self.abs_tol}")
        if not (np.isfinite(self.t_max) and self.t_max >= 0):
            raise InvalidParameter(f"t_max must be finite and >= 0, got {self.t_max}")
        if self.stop_speed < 0:
            raise InvalidParameter(f"stop_speed must be >= 0, got {self.stop_speed}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise InvalidParameter(f"record_stride must be a positive integer, got {self.record_stride}")
        if int(self.workers) != self.workers or self.workers < 1:
            raise InvalidParameter(f"workers must be a positive integer, got {self.workers}")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Samples of one closed-loop run; every array shares its first dimension with times."""

    times: np.ndarray
    states: np.ndarray
    payoffs: np.ndarray
    speeds: np.ndarray
    correlations: np.ndarray
    ccw_integrals: np.ndarray
    ccw_mins: np.ndarray
    mech_states: np.ndarray
    ccw_ledger: object
    rule_name: str = ""
    label: str = ""
    stopped_early: bool = False
    max_projection: float = 0.0

    def __len__(self):
        return len(self.times)

    @property
    def n(self):
        return self.states.shape[1]

    @property
    def final_state(self):
        return self.states[-1]

    def to_frame(self):
        """Table with columns t, x1..xn, p1..pn, speed, correlation, ccw_integral, ccw_min."""
        columns = {"t": self.times}
        for i in range(self.n):
            columns[f"x{i + 1}"] = self.states[:, i]
        for i in range(self.n):
            columns[f"p{i + 1}"] = self.payoffs[:, i]
        columns["speed"] = self.speeds
        columns["correlation"] = self.correlations
        columns["ccw_integral"] = self.ccw_integrals
        columns["ccw_min"] = self.ccw_mins
        return pd.DataFrame(columns)


def export_csv(record, path):
    record.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def _derivatives(rule, mech, x, q):
    p = payoff_array(mech, x, q)
    return rule.velocity(x, p), state_derivative(mech, x, q), p


def closed_loop_rhs(spec, mech, x, q=None):
    """
    Right-hand side of the interconnection at (x, q).

    Returns:
        tuple: (VectorField of the rule at p = evaluate(mech, x, q), q')
    """
    x = np.asarray(x, dtype=float)
    q = mech.initial_state() if q is None else np.asarray(q, dtype=float)
    velocity, q_dot, _ = _derivatives(CompiledRule(spec), mech, x, q)
    return VectorField(velocity), q_dot


class _Recorder:
    def __init__(self):
        self.rows = {key: [] for key in ("t", "x", "p", "speed", "corr", "ccw", "ccw_min", "q")}

    def add(self, t, x, p, xdot, q, ledger):
        self.rows["t"].append(t)
        self.rows["x"].append(np.array(x))
        self.rows["p"].append(np.array(p))
        self.rows["speed"].append(float(np.max(np.abs(xdot))))
        self.rows["corr"].append(float(p @ xdot))
        self.rows["ccw"].append(ledger.running_integral)
        self.rows["ccw_min"].append(ledger.running_min)
        self.rows["q"].append(np.array(q))

    def finish(self, ledger, rule, label, stopped_early, max_projection, n, q_size):
        rows = self.rows
        count = len(rows["t"])
        return TrajectoryRecord(
            times=np.array(rows["t"]),
            states=np.array(rows["x"]).reshape(count, n),
            payoffs=np.array(rows["p"]).reshape(count, n),
            speeds=np.array(rows["speed"]),
            correlations=np.array(rows["corr"]),
            ccw_integrals=np.array(rows["ccw"]),
            ccw_mins=np.array(rows["ccw_min"]),
            mech_states=np.array(rows["q"], dtype=float).reshape(count, q_size),
            ccw_ledger=ledger,
            rule_name=rule.name,
            label=label,
            stopped_early=stopped_early,
            max_projection=max_projection,
        )


def _at_rest(cfg, xdot, q_dot, p):
    speed = float(np.max(np.abs(xdot)))
    q_speed = float(np.max(np.abs(q_dot))) if q_dot.size else 0.0
    return speed <= cfg.stop_speed and float(p @ xdot) <= STOP_CORRELATION and q_speed <= cfg.stop_speed


def simulate(spec, mech, x0, cfg=None, q0=None, label="", drift_bound=DRIFT_BOUND):
    """
    Integrate the closed loop from x0 (and q0, zero by default) up to cfg.t_max.

    Args:
        spec: RuleSpec
        mech: PayoffMechanism; its stored state is not modified
        x0: initial state on the simplex
        cfg: IntegratorConfig
        q0: initial filter state
        label: run name carried into the record

    Returns:
        TrajectoryRecord

    Raises:
        DriftExceeded: a step left the simplex by more than drift_bound
        IntegratorFailure: the adaptive stepper failed or its step collapsed
    """
    cfg = IntegratorConfig() if cfg is None else cfg
    x = np.array(project_to_simplex(x0, drift_bound), dtype=float)
    if x.size != mech.n:
        raise DimensionMismatch(f"Mechanism '{mech.name}' has {mech.n} strategies, x0 has {x.size}")
    q = mech.initial_state() if q0 is None else np.array(q0, dtype=float).reshape(-1)
    if q.size != mech.state_size:
        raise DimensionMismatch(f"Mechanism '{mech.name}' has state size {mech.state_size}, q0 has {q.size}")

    rule = CompiledRule(spec)
    if cfg.method == RK4_FIXED:
        return _simulate_rk4(rule, mech, x, q, cfg, label, drift_bound)
    return _simulate_rk45(rule, mech, x, q, cfg, label, drift_bound)


def _simulate_rk4(rule, mech, x, q, cfg, label, drift_bound):
    n, q_size = x.size, q.size
    ledger = new_ledger(mech)
    recorder = _Recorder()
    xdot, q_dot, p = _derivatives(rule, mech, x, q)
    recorder.add(0.0, x, p, xdot, q, ledger)

    steps = int(math.ceil(cfg.t_max / cfg.dt - 1e-9)) if cfg.t_max > 0 else 0
    max_projection = 0.0
    stopped_early = False
    t = 0.0
    for step in range(1, steps + 1):
        t_next = cfg.t_max if step == steps else step * cfg.dt
        h = t_next - t

        # k1 is the end-of-step evaluation of the previous step
        k2x, k2q, _ = _derivatives(rule, mech, x + 0.5 * h * xdot, q + 0.5 * h * q_dot)
        k3x, k3q, _ = _derivatives(rule, mech, x + 0.5 * h * k2x, q + 0.5 * h * k2q)
        k4x, k4q, _ = _derivatives(rule, mech, x + h * k3x, q + h * k3q)
        x_next = x + h / 6.0 * (xdot + 2.0 * k2x + 2.0 * k3x + k4x)
        q_next = q + h / 6.0 * (q_dot + 2.0 * k2q + 2.0 * k3q + k4q)
        x_next, correction = project_array(x_next, drift_bound)
        max_projection = max(max_projection, correction)

        xdot_next, q_dot_next, p_next = _derivatives(rule, mech, x_next, q_next)
        ledger = ccw_ledger_step(ledger, 0.5 * (x + x_next), p, p_next, h)
        x, q, xdot, q_dot, p, t = x_next, q_next, xdot_next, q_dot_next, p_next, t_next

        stopped_early = step < steps and _at_rest(cfg, xdot, q_dot, p)
        if step % cfg.record_stride == 0 or step == steps or stopped_early:
            recorder.add(t, x, p, xdot, q, ledger)
        if stopped_early:
            logger.debug("Run '%s' at rest at t=%.4g", label, t)
            break

    return recorder.finish(ledger, rule, label, stopped_early, max_projection, n, q_size)


def _simulate_rk45(rule, mech, x, q, cfg, label, drift_bound):
    n, q_size = x.size, q.size
    ledger = new_ledger(mech)
    recorder = _Recorder()
    xdot, q_dot, p = _derivatives(rule, mech, x, q)
    recorder.add(0.0, x, p, xdot, q, ledger)
    if cfg.t_max == 0:
        return recorder.finish(ledger, rule, label, False, 0.0, n, q_size)

    def rhs(_, z):
        velocity, z_dot, _ = _derivatives(rule, mech, z[:n], z[n:])
        return np.concatenate([velocity, z_dot])

    solver = RK45(rhs, 0.0, np.concatenate([x, q]), cfg.t_max, rtol=cfg.rel_tol, atol=cfg.abs_tol)
    max_projection = 0.0
    stopped_early = False
    step = 0
    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            raise IntegratorFailure(f"Run '{label}' failed at t={solver.t:.6g}: {message}")
        step += 1
        if solver.status == "running" and solver.step_size is not None and solver.step_size < MIN_STEP:
            raise IntegratorFailure(f"Run '{label}': step size collapsed to {solver.step_size:.3e} at t={solver.t:.6g}")

        x_next, correction = project_array(solver.y[:n].copy(), drift_bound)
        solver.y[:n] = x_next
        max_projection = max(max_projection, correction)
        q_next = solver.y[n:].copy()

        xdot_next, q_dot_next, p_next = _derivatives(rule, mech, x_next, q_next)
        ledger = ccw_ledger_step(ledger, 0.5 * (x + x_next), p, p_next, solver.t - solver.t_old)
        x, q, xdot, q_dot, p = x_next, q_next, xdot_next, q_dot_next, p_next

        finished = solver.status == "finished"
        stopped_early = not finished and _at_rest(cfg, xdot, q_dot, p)
        if step % cfg.record_stride == 0 or finished or stopped_early:
            recorder.add(float(solver.t), x, p, xdot, q, ledger)
        if stopped_early:
            logger.debug("Run '%s' at rest at t=%.4g", label, solver.t)
            break

    return recorder.finish(ledger, rule, label, stopped_early, max_projection, n, q_size)


# ---------------------------------------------------------------- batches

@dataclass(frozen=True)
class RunOutcome:
    rule_name: str
    label: str
    record: Optional[TrajectoryRecord] = None
    error: Optional[str] = None
    error_kind: Optional[str] = None   # exception class name

    @property
    def ok(self):
        return self.error is None


def _run_one(task):
    spec, mech, x0, cfg, label = task
    try:
        return RunOutcome(spec.name, label, simulate(spec, mech, x0, cfg, label=label))
    except (EvodynError, FloatingPointError) as e:
        return RunOutcome(spec.name, label, None, f"{type(e).__name__}: {e}", type(e).__name__)


def batch_simulate(spec_list, mech, x0_list, cfg=None, labels=None):
    """
    Every (rule, initial state) pair, rule-major.

    A failing run is kept as a RunOutcome with its error; the others still run.
    With cfg.workers > 1 the runs go through a process pool, so rules and mechanisms
    must be picklable (user rules defined as lambdas are not).

    Returns:
        list of RunOutcome
    """
    cfg = IntegratorConfig() if cfg is None else cfg
    labels = [f"x0_{i}" for i in range(len(x0_list))] if labels is None else list(labels)
    if len(labels) != len(x0_list):
        raise InvalidParameter(f"Got {len(labels)} labels for {len(x0_list)} initial states")

    tasks = [
        (spec, mech, x0, cfg, f"{spec.name}/{label}")
        for spec in spec_list
        for x0, label in zip(x0_list, labels)
    ]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    else:
        outcomes = [_run_one(task) for task in tasks]

    for outcome in outcomes:
        if not outcome.ok:
            logger.warning("Run '%s' failed: %s", outcome.label, outcome.error)
    return outcomes
