import numpy as np
import pandas as pd
import pytest

from analysis import barbalat_diagnostic, convergence_verdict, ccw_envelope
from engine import (
    RK45_ADAPTIVE,
    IntegratorConfig,
    batch_simulate,
    closed_loop_rhs,
    export_csv,
    simulate,
)
from errors import DimensionMismatch, InvalidParameter
from payoffs import affine_game, memoryless_mechanism, payoff_bound, stationary_game
from rules import preset_rule
from simplex_core import nash_equilibria_affine

from conftest import FILTERED_STARTS, UNIFORM

CSV_HEADER = "t,x1,x2,x3,p1,p2,p3,speed,correlation,ccw_integral,ccw_min"


def _settled(mech, x):
    params = mech.lti.params
    return params.A @ x + params.b


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"dt": 0.0}, {"method": "euler"}, {"record_stride": 0}, {"t_max": -1.0}, {"rel_tol": 0.0}, {"workers": 0}],
    )
    def test_invalid_values(self, kwargs):
        with pytest.raises(InvalidParameter):
            IntegratorConfig(**kwargs)


class TestRightHandSide:
    def test_rest_point_of_the_interconnection(self, filtered_mechanism, filtered_rules):
        for spec in filtered_rules:
            field, q_dot = closed_loop_rhs(spec, filtered_mechanism, UNIFORM, _settled(filtered_mechanism, UNIFORM))
            assert np.max(np.abs(np.asarray(field))) <= 1e-9
            assert np.max(np.abs(q_dot)) <= 1e-9

    def test_initial_preference_for_strategy_one(self, filtered_mechanism):
        field, q_dot = closed_loop_rhs(preset_rule("smith"), filtered_mechanism, FILTERED_STARTS["c"])
        assert np.asarray(field)[0] > 0.0
        assert np.allclose(q_dot, 5.0 * np.array([-0.4, 1.0, 0.0]))

    def test_zero_game_has_no_motion(self):
        mech = memoryless_mechanism(affine_game(np.zeros((3, 3)), np.zeros(3)))
        field, q_dot = closed_loop_rhs(preset_rule("smith"), mech, [0.2, 0.3, 0.5])
        assert np.array_equal(np.asarray(field), np.zeros(3))
        assert q_dot.size == 0


class TestSimulate:
    def test_zero_horizon_gives_one_sample(self, filtered_mechanism):
        for method in ("rk4_fixed", RK45_ADAPTIVE):
            record = simulate(preset_rule("bnn"), filtered_mechanism, FILTERED_STARTS["d"], IntegratorConfig(method=method, t_max=0.0))
            assert len(record) == 1
            assert np.allclose(record.final_state, FILTERED_STARTS["d"], atol=1e-15)
            assert record.mech_states.shape == (1, 3)

    def test_rest_point_stays_put(self, filtered_mechanism):
        q0 = _settled(filtered_mechanism, UNIFORM)
        for name in ("bnn", "smith", "replicator_smith", "blended_hybrid"):
            record = simulate(preset_rule(name), filtered_mechanism, UNIFORM, IntegratorConfig(dt=0.01, t_max=5.0), q0=q0)
            assert np.max(np.abs(record.states - UNIFORM)) <= 1e-6

    def test_record_invariants(self, filtered_mechanism):
        cfg = IntegratorConfig(dt=0.01, t_max=1.0, record_stride=10)
        record = simulate(preset_rule("smith"), filtered_mechanism, FILTERED_STARTS["e"], cfg, label="e")
        assert len(record) == 11
        assert np.all(np.diff(record.times) > 0)
        assert record.times[-1] == pytest.approx(1.0)
        for column in (record.states, record.payoffs, record.speeds, record.correlations, record.ccw_mins, record.mech_states):
            assert len(column) == len(record.times)
        assert np.allclose(record.states.sum(axis=1), 1.0, atol=1e-12)
        assert record.states.min() >= 0.0
        assert np.all(np.diff(record.ccw_mins) <= 0.0)
        assert np.all(record.ccw_mins <= record.ccw_integrals)
        assert record.label == "e" and record.rule_name == "smith"

    def test_last_step_lands_on_the_horizon(self, filtered_mechanism):
        record = simulate(preset_rule("bnn"), filtered_mechanism, FILTERED_STARTS["f"], IntegratorConfig(dt=0.03, t_max=0.1))
        assert record.times.tolist() == pytest.approx([0.0, 0.03, 0.06, 0.09, 0.1])

    def test_mechanism_state_is_not_touched(self, filtered_mechanism):
        simulate(preset_rule("smith"), filtered_mechanism, FILTERED_STARTS["c"], IntegratorConfig(dt=0.01, t_max=0.5))
        assert np.array_equal(filtered_mechanism.lti.q, np.zeros(3))

    def test_correlation_stays_nonnegative(self, filtered_mechanism, filtered_rules):
        for spec in filtered_rules:
            record = simulate(spec, filtered_mechanism, FILTERED_STARTS["d"], IntegratorConfig(dt=0.01, t_max=5.0))
            assert record.correlations.min() >= -1e-9

    def test_speeds_match_the_finite_differences(self, filtered_mechanism):
        dt = 0.01
        record = simulate(preset_rule("smith"), filtered_mechanism, FILTERED_STARTS["d"], IntegratorConfig(dt=dt, t_max=8.0))
        late = record.times[:-1] >= 5.0
        differences = np.max(np.abs(np.diff(record.states, axis=0)), axis=1) / dt
        assert np.all(np.abs(differences[late] - record.speeds[:-1][late]) <= 10 * dt)

    def test_adaptive_and_fixed_step_agree(self, filtered_mechanism):
        spec = preset_rule("smith")
        fixed = simulate(spec, filtered_mechanism, FILTERED_STARTS["d"], IntegratorConfig(dt=0.01, t_max=10.0))
        adaptive = simulate(spec, filtered_mechanism, FILTERED_STARTS["d"], IntegratorConfig(method=RK45_ADAPTIVE, t_max=10.0))
        assert adaptive.times[-1] == pytest.approx(10.0)
        assert np.max(np.abs(fixed.final_state - adaptive.final_state)) <= 1e-5

    def test_wrong_sizes(self, filtered_mechanism):
        with pytest.raises(DimensionMismatch):
            simulate(preset_rule("bnn"), filtered_mechanism, [0.5, 0.5])
        with pytest.raises(DimensionMismatch):
            simulate(preset_rule("bnn"), filtered_mechanism, UNIFORM, q0=[0.0, 0.0])


class TestExport:
    def test_csv_layout(self, filtered_mechanism, tmp_path):
        record = simulate(preset_rule("bnn"), filtered_mechanism, FILTERED_STARTS["c"], IntegratorConfig(dt=0.01, t_max=0.2))
        path = export_csv(record, tmp_path / "run.csv")
        raw = path.read_bytes()
        assert b"\r\n" not in raw
        assert raw.decode("utf-8").splitlines()[0] == CSV_HEADER
        table = pd.read_csv(path, float_precision="round_trip")
        assert len(table) == len(record)
        assert np.array_equal(table[["x1", "x2", "x3"]].to_numpy(), record.states)
        assert np.array_equal(table["ccw_min"].to_numpy(), record.ccw_mins)


class TestBatch:
    def test_empty_batch(self, filtered_mechanism, filtered_rules):
        assert batch_simulate(filtered_rules, filtered_mechanism, []) == []

    def test_failing_runs_do_not_stop_the_batch(self, filtered_mechanism, filtered_rules):
        starts = [FILTERED_STARTS["c"], FILTERED_STARTS["d"], [0.5, 0.5, 0.5], FILTERED_STARTS["f"]]
        outcomes = batch_simulate(filtered_rules, filtered_mechanism, starts, IntegratorConfig(dt=0.01, t_max=1.0),
                                  labels=["c", "d", "bad", "f"])
        assert len(outcomes) == 12
        assert [outcome.label for outcome in outcomes[:4]] == ["bnn/c", "bnn/d", "bnn/bad", "bnn/f"]
        failed = [outcome for outcome in outcomes if not outcome.ok]
        assert len(failed) == 3
        assert all(outcome.error_kind == "DriftExceeded" and outcome.record is None for outcome in failed)
        assert all(outcome.record is not None for outcome in outcomes if outcome.ok)

    def test_label_count_must_match(self, filtered_mechanism, filtered_rules):
        with pytest.raises(InvalidParameter):
            batch_simulate(filtered_rules, filtered_mechanism, [UNIFORM], labels=["a", "b"])

    def test_process_pool_matches_sequential_runs(self, filtered_mechanism, filtered_rules):
        starts = [FILTERED_STARTS["c"], FILTERED_STARTS["e"]]
        sequential = batch_simulate(filtered_rules, filtered_mechanism, starts, IntegratorConfig(dt=0.01, t_max=0.5))
        pooled = batch_simulate(filtered_rules, filtered_mechanism, starts, IntegratorConfig(dt=0.01, t_max=0.5, workers=2))
        for one, two in zip(sequential, pooled):
            assert one.label == two.label
            assert np.array_equal(one.record.states, two.record.states)


@pytest.mark.slow
class TestFilteredPotentialScenario:
    def test_all_twelve_runs_reach_the_nash_equilibrium(self, filtered_mechanism, filtered_rules, base_game):
        ne = nash_equilibria_affine(base_game.A, base_game.b)
        outcomes = batch_simulate(filtered_rules, filtered_mechanism, list(FILTERED_STARTS.values()),
                                  IntegratorConfig(dt=0.01, t_max=50.0), labels=list(FILTERED_STARTS))
        assert len(outcomes) == 12
        F = stationary_game(filtered_mechanism)
        for outcome in outcomes:
            record = outcome.record
            assert np.max(np.abs(record.final_state - UNIFORM)) <= 1e-3, outcome.label
            assert np.max(np.abs(record.payoffs[-1] - F(record.final_state))) <= 1e-3
            assert record.correlations.min() >= -1e-9
            assert -record.ccw_mins[-1] <= 10.0
            assert record.max_projection <= 1e-9
            verdict = convergence_verdict(record, ne)
            assert verdict.converged, outcome.label
            diagnostic = barbalat_diagnostic(record)
            limit = 2.0 * payoff_bound(filtered_mechanism) + ccw_envelope(record.ccw_ledger)
            assert diagnostic.integral_of_correlation <= limit
            assert diagnostic.correlation_tail_max <= 1e-6

    def test_halving_the_step_keeps_the_final_state(self, filtered_mechanism):
        spec = preset_rule("replicator_smith")
        coarse = simulate(spec, filtered_mechanism, FILTERED_STARTS["d"], IntegratorConfig(dt=0.01, t_max=50.0))
        fine = simulate(spec, filtered_mechanism, FILTERED_STARTS["d"], IntegratorConfig(dt=0.005, t_max=50.0))
        assert np.max(np.abs(coarse.final_state - fine.final_state)) <= 1e-6
        assert np.max(np.abs(coarse.final_state - UNIFORM)) <= 1e-3


@pytest.mark.slow
def test_potential_games_keep_the_ledger_bounded(rng, random_rule):
    rules = [random_rule(rng, name=f"random_{i}") for i in range(20)]
    cfg = IntegratorConfig(dt=1e-3, t_max=0.5, record_stride=100)
    for index in range(50):
        n = (3, 4, 5)[index % 3]
        R = rng.uniform(-1.0, 1.0, size=(n, n))
        game = affine_game(0.5 * (R + R.T), rng.uniform(-0.5, 0.5, size=n))
        mech = memoryless_mechanism(game)
        bound = 2.0 * (game.sup_norm + game.potential_max) + 1e-3
        x0 = rng.dirichlet(np.ones(n))
        for spec in rules:
            record = simulate(spec, mech, x0, cfg)
            assert -record.ccw_mins.min() <= bound, f"{spec.describe()} on game {index}"
