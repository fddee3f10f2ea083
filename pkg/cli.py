"""
evodyn command line

    python cli.py simulate <scenario> [--clean]
    python cli.py certify <scenario> [--pure-replicator] [--ni-gain K]
    python cli.py list-scenarios [-v]

<scenario> is a .cfg path or the name of a bundled scenario.
Exit codes: 0 ok, 1 no scenarios found, 2 configuration error, 3 integrator failure.
"""

import argparse
import logging
import os
import sys
from datetime import datetime

import numpy as np

from analysis import (
    barbalat_diagnostic,
    ccw_certificate,
    ccw_envelope,
    ccw_falsify,
    convergence_verdict,
    default_omega_grid,
    falsify_records,
    filter_with_gain,
    ni_frequency_test,
)
from cleaning import clean_run_outputs
from engine import batch_simulate, export_csv
from errors import DriftExceeded, IntegratorFailure
from payoffs import line_integral, payoff_bound, stationary_game, verify_potential_identity
from plotting import write_ternary_svg
from reporting import PropertyLine, run_row, write_report, write_results_workbook
from rules import preset_rule, sample_nash_stationarity, sample_positive_correlation, sample_tellegen
from scenario_config import (
    OutputsBlock,
    build_mechanism,
    build_rules,
    initial_states,
    list_scenarios,
    load_scenario,
    resolve_scenario,
    scenario_dir,
)
from simplex_core import face_barycenters, nash_equilibria_affine

# ============== CONFIGURATION ==============
EXIT_OK = 0
EXIT_NO_SCENARIOS = 1
EXIT_CONFIG = 2
EXIT_INTEGRATOR = 3
OUTPUT_ROOT = "output"
STATIONARY_TOLERANCE = 1e-3    # ||p(T) - F(x(T))||_inf of a converged run
BARBALAT_SLACK = 1e-6
QUADRATURE_TOLERANCE = 1e-6
PATH_SAMPLES = 1000
CIRCULATION_TOLERANCE = 1e-8
# ===========================================

INTEGRATOR_ERRORS = (IntegratorFailure.__name__, DriftExceeded.__name__)


class StatusLog:
    """Timestamped status lines on stdout; errors and warnings are kept for the summary."""

    def __init__(self, stream=None):
        self.stream = stream or sys.stdout
        self.messages = []
        self.errors = []
        self.warnings = []

    def __call__(self, msg, level="info"):
        timestamp = datetime.now().strftime("%H:%M:%S")
        formatted_msg = f"[{timestamp}] {msg}"
        self.messages.append(formatted_msg)
        if level == "error":
            self.errors.append(msg)
        elif level == "warning":
            self.warnings.append(msg)
        print(formatted_msg, file=self.stream)

    def summary(self):
        if self.errors:
            self(f"❌ Finished with {len(self.errors)} error(s), {len(self.warnings)} warning(s)")
        elif self.warnings:
            self(f"⚠️ Finished with {len(self.warnings)} warning(s)")
        else:
            self("✅ Finished")


def resolved_outputs(cfg):
    """[outputs] paths with defaults under output/<scenario name>/."""
    outputs = cfg.outputs
    folder = os.path.join(OUTPUT_ROOT, cfg.name)
    return OutputsBlock(
        csv_dir=outputs.csv_dir or folder,
        svg_path=outputs.svg_path or os.path.join(folder, f"{cfg.name}.svg"),
        report_path=outputs.report_path or os.path.join(folder, "report.txt"),
        workbook_path=outputs.workbook_path or os.path.join(folder, "results.xlsx"),
    )


def _load(config_path, status):
    """(cfg, rules, mechanism), or None after reporting the configuration error."""
    try:
        path = resolve_scenario(config_path)
        cfg = load_scenario(path)
        return cfg, build_rules(cfg), build_mechanism(cfg)
    except (ValueError, OSError) as e:
        status(f"❌ Configuration error in '{config_path}': {e}", level="error")
        return None


def _nash_set(mech, status):
    if not mech.base.is_affine:
        status("⚠️ Stationary game is not affine: no Nash enumeration", level="warning")
        return None
    ne = nash_equilibria_affine(mech.base.A, mech.base.b)
    if ne.continuum:
        status("⚠️ Nash set contains a continuum: distances are upper bounds", level="warning")
    return ne


def _run_lines(outcome, verdict, diagnostic, mech):
    record = outcome.record
    name = outcome.label
    lines = [PropertyLine(
        f"converged[{name}]",
        "pass" if verdict.converged else "fail",
        {"final_ne_distance": verdict.final_ne_distance, "final_speed": verdict.final_speed,
         "correlation_tail": verdict.correlation_tail, "final_state": record.final_state},
    )]
    gap = float(np.max(np.abs(record.payoffs[-1] - stationary_game(mech)(record.final_state))))
    if verdict.converged:
        lines.append(PropertyLine(f"stationary_game[{name}]", "pass" if gap <= STATIONARY_TOLERANCE else "fail",
                                  {"payoff_gap": gap}))
        limit = 2.0 * payoff_bound(mech) + ccw_envelope(record.ccw_ledger) + BARBALAT_SLACK
        bounded = np.isfinite(diagnostic.integral_of_correlation) and diagnostic.integral_of_correlation <= limit
        lines.append(PropertyLine(
            f"barbalat[{name}]",
            "pass" if bounded and diagnostic.correlation_tail_max <= 1e-6 else "fail",
            {"integral": diagnostic.integral_of_correlation, "limit": limit,
             "tail_max": diagnostic.correlation_tail_max},
        ))
    return lines


def cmd_simulate(config_path, clean=False, status=None):
    """
    Run every (rule, initial condition) pair of a scenario and write CSVs, SVG, report and workbook.

    Returns:
        int: exit code
    """
    status = status or StatusLog()
    loaded = _load(config_path, status)
    if loaded is None:
        return EXIT_CONFIG
    cfg, rules, mech = loaded
    outputs = resolved_outputs(cfg)
    status(f"📁 Scenario '{cfg.name}': {len(rules)} rule(s) x {len(cfg.initial_conditions)} initial condition(s)")

    if clean:
        removed = clean_run_outputs(outputs)
        status(f"🧹 Removed {len(removed)} stale artifact(s)")

    labels, states = zip(*initial_states(cfg)) if cfg.initial_conditions else ((), ())
    outcomes = batch_simulate(rules, mech, list(states), cfg.integrator, labels=list(labels))
    ne = _nash_set(mech, status)

    os.makedirs(outputs.csv_dir, exist_ok=True)
    lines, rows, records = [], [], []
    integrator_failed = False
    converged = 0
    for outcome in outcomes:
        if not outcome.ok:
            integrator_failed |= outcome.error_kind in INTEGRATOR_ERRORS
            status(f"❌ Run {outcome.label} failed: {outcome.error}", level="error")
            lines.append(PropertyLine(f"converged[{outcome.label}]", "fail", {"error": outcome.error}))
            rows.append(run_row(outcome))
            continue
        record = outcome.record
        records.append(record)
        csv_path = os.path.join(outputs.csv_dir, outcome.label.replace("/", "_") + ".csv")
        export_csv(record, csv_path)

        diagnostic = barbalat_diagnostic(record)
        verdict = convergence_verdict(record, ne) if ne is not None else None
        if verdict is not None:
            converged += verdict.converged
            lines += _run_lines(outcome, verdict, diagnostic, mech)
        else:
            lines.append(PropertyLine(f"converged[{outcome.label}]", "inconclusive", {"reason": "no Nash set"}))
        rows.append(run_row(outcome, verdict, diagnostic))

    falsification = falsify_records(records, cfg.certify.drift_threshold)
    certificate = ccw_certificate(mech, falsification)
    witness = {"reason": certificate.reason, "drift_rate": falsification.drift_rate}
    if falsification.found:
        witness["run"] = falsification.record.label
    lines.append(PropertyLine("ccw", certificate.verdict, witness))

    if cfg.n == 3 and records:
        equilibria = ne.as_array() if ne is not None and len(ne) else None
        write_ternary_svg(records, outputs.svg_path, title=cfg.name, equilibria=equilibria)
        status(f"📁 Trajectory plot: {outputs.svg_path}")
    elif cfg.n != 3:
        status(f"⚠️ No ternary plot for n={cfg.n}", level="warning")

    header = (f"scenario: {cfg.name}", f"mechanism: {mech.variant}", f"payoff_bound: {payoff_bound(mech):g}")
    write_report(outputs.report_path, lines, header)
    write_results_workbook(outputs.workbook_path, rows, lines, {
        "Scenario": cfg.name,
        "Runs": len(outcomes),
        "Converged": converged,
        "Failed runs": sum(not outcome.ok for outcome in outcomes),
        "CCW": certificate.verdict,
        "Payoff bound": payoff_bound(mech),
    })
    status(f"📁 Report: {outputs.report_path}")
    status(f"📁 Workbook: {outputs.workbook_path}")
    status(f"✅ {converged}/{len(outcomes)} run(s) converged; CCW {certificate.verdict}")
    status.summary()
    return EXIT_INTEGRATOR if integrator_failed else EXIT_OK


def _sampler_line(report, rule_name):
    return PropertyLine(f"{report.property}[{rule_name}]", report.verdict,
                        dict(report.witness or {}, samples=report.samples))


def _potential_lines(mech, cfg):
    game = mech.base
    if game.has_potential:
        points = [np.asarray(vector) for _, vector in cfg.initial_conditions] or list(face_barycenters(cfg.n)[:2])
        if len(points) < 2:
            points.append(np.full(cfg.n, 1.0 / cfg.n))
        legs = [np.linspace(a, b, PATH_SAMPLES) for a, b in zip(points[:-1], points[1:])]
        path = np.vstack(legs)
        ok = verify_potential_identity(game, path, QUADRATURE_TOLERANCE)
        return [PropertyLine("potential_identity", "pass" if ok else "fail", {"path_samples": len(path)})]

    vertices = np.vstack([np.eye(cfg.n), np.eye(cfg.n)[:1]])
    loop = np.vstack([np.linspace(a, b, PATH_SAMPLES) for a, b in zip(vertices[:-1], vertices[1:])])
    circulation = line_integral(game, loop)
    verdict = "fail" if abs(circulation) > CIRCULATION_TOLERANCE else "inconclusive"
    return [PropertyLine("potential_game", verdict, {"vertex_loop_circulation": circulation})]


def cmd_certify(config_path, pure_replicator=False, ni_gain=None, status=None):
    """
    Check the structural properties of a scenario and write a certification report.

    PC / NS / Tellegen for every rule, the NI test of the filter, the CCW certificate
    and the potential identity (or a circulation witness when there is no potential).
    ni_gain reruns the NI test with k replaced, even when the mechanism would reject that gain.

    Returns:
        int: exit code
    """
    status = status or StatusLog()
    loaded = _load(config_path, status)
    if loaded is None:
        return EXIT_CONFIG
    cfg, rules, mech = loaded
    settings = cfg.certify
    if pure_replicator:
        rules = rules + [preset_rule("replicator")]
        status("⚠️ Added the pure replicator rule (hybrid-cone check bypassed)", level="warning")

    lines = []
    for spec in rules:
        rng = np.random.default_rng(settings.seed)
        for sampler in (sample_positive_correlation, sample_nash_stationarity, sample_tellegen):
            report = sampler(spec, cfg.n, settings.samples, rng)
            lines.append(_sampler_line(report, spec.name))
            if not report.passed:
                status(f"⚠️ {report.property} fails for rule '{spec.name}'", level="warning")

    ni_report = None
    if mech.lti is not None:
        grid = default_omega_grid(mech.lti.params.lam, settings.omega_points)
        ni_report = ni_frequency_test(mech.lti, grid)
        witness = {"min_eigenvalue": float(np.min(ni_report.min_eigenvalues)),
                   "closed_form_gap": ni_report.closed_form_gap}
        if ni_report.witness_omega is not None:
            witness["omega"] = ni_report.witness_omega
        lines.append(PropertyLine("negative_imaginary", ni_report.verdict, witness))
        if ni_gain is not None:
            trial = ni_frequency_test(filter_with_gain(mech.lti.params, ni_gain), grid)
            witness = {"min_eigenvalue": float(np.min(trial.min_eigenvalues))}
            if trial.witness_omega is not None:
                witness["omega"] = trial.witness_omega
            lines.append(PropertyLine(f"negative_imaginary[k={ni_gain:g}]", trial.verdict, witness))
    elif ni_gain is not None:
        status("⚠️ --ni-gain ignored: the mechanism has no filter", level="warning")

    starts = [vector for _, vector in initial_states(cfg)] or list(face_barycenters(cfg.n)[: cfg.n])
    try:
        attempts = [ccw_falsify(mech, spec, starts, settings.horizon, settings.drift_threshold, cfg.integrator)
                    for spec in rules if not spec.bypass_cone]
    except (IntegratorFailure, DriftExceeded) as e:
        status(f"❌ Integration failed during the CCW search: {e}", level="error")
        status.summary()
        return EXIT_INTEGRATOR
    falsification = min(attempts, key=lambda item: item.drift_rate) if attempts else None
    certificate = ccw_certificate(mech, falsification, ni_report)
    witness = {"reason": certificate.reason}
    if falsification is not None:
        witness["drift_rate"] = falsification.drift_rate
    lines.append(PropertyLine("ccw", certificate.verdict, witness))

    lines += _potential_lines(mech, cfg)

    report_path = os.path.splitext(resolved_outputs(cfg).report_path)[0] + "_certify.txt"
    write_report(report_path, lines, (f"scenario: {cfg.name}", f"samples: {settings.samples}"))
    status(f"📁 Certification report: {report_path}")
    for line in lines:
        if line.verdict == "fail":
            status(f"⚠️ {line.property}: fail", level="warning")
    status.summary()
    return EXIT_OK


def cmd_list_scenarios(verbose=False, status=None):
    """Print bundled scenario names with one-line descriptions; exit 1 when none are found."""
    status = status or StatusLog()
    found = list_scenarios()
    if not found:
        status(f"❌ No scenario files in {scenario_dir()}", level="error")
        return EXIT_NO_SCENARIOS
    for name, description, path in found:
        print(f"{name}: {description}")
        if verbose:
            cfg = load_scenario(path)
            rules = ", ".join(rule.name for rule in cfg.rules)
            print(f"    n={cfg.n}, mechanism={cfg.mechanism.kind}, rules=[{rules}], "
                  f"initial_conditions={len(cfg.initial_conditions)}, t_max={cfg.integrator.t_max:g}, "
                  f"dt={cfg.integrator.dt:g}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="debug logging from the library modules")

    parser = argparse.ArgumentParser(prog="evodyn", description="Evolutionary Nash equilibrium learning toolkit")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common], help="integrate a scenario")
    simulate.add_argument("scenario")
    simulate.add_argument("--clean", action="store_true", help="remove stale outputs first")

    certify = commands.add_parser("certify", parents=[common], help="check structural properties")
    certify.add_argument("scenario")
    certify.add_argument("--pure-replicator", action="store_true",
                         help="also check the pure replicator rule (expected to fail Nash stationarity)")
    certify.add_argument("--ni-gain", type=float, default=None, metavar="K",
                         help="also run the NI test with the filter gain k replaced by K")

    listing = commands.add_parser("list-scenarios", parents=[common], help="list bundled scenarios")
    listing.add_argument("-v", dest="details", action="store_true", help="show parameter summaries")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "simulate":
        return cmd_simulate(args.scenario, clean=args.clean)
    if args.command == "certify":
        return cmd_certify(args.scenario, pure_replicator=args.pure_replicator, ni_gain=args.ni_gain)
    return cmd_list_scenarios(verbose=args.details)


if __name__ == "__main__":
    sys.exit(main())
