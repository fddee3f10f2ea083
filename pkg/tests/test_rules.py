import numpy as np
import pytest

from errors import DimensionMismatch, InvalidRuleSpec
from rules import (
    PRESET_NAMES,
    CompiledRule,
    CORule,
    EPRule,
    RuleSpec,
    abr_rates,
    bnn_rates,
    component_correlations,
    correlation,
    edm_field,
    edm_velocity,
    hybrid_rates,
    imitation_monotonicity_holds,
    preset_rule,
    replicator_psi,
    replicator_rates,
    sample_nash_stationarity,
    sample_positive_correlation,
    sample_tellegen,
    smith_rates,
    squared_psi,
    tellegen_decomposition,
)
from simplex_core import sample_payoff_lattice, sample_simplex

UNIFORM = np.full(3, 1.0 / 3.0)
VERTEX = np.array([1.0, 0.0, 0.0])
TOWARD_TWO = np.array([0.0, 1.0, 0.0])
PC_RULES = ("smith", "bnn", "abr", "replicator", "squared_hybrid", "replicator_smith", "smith_abr", "blended_hybrid")


class TestCanonicalRates:
    def test_smith(self):
        assert np.array_equal(smith_rates(UNIFORM, [1, 1, 1]), np.zeros((3, 3)))
        expected = np.zeros((3, 3))
        expected[0, 1], expected[0, 2], expected[2, 1] = 2.0, 1.0, 1.0
        assert np.array_equal(smith_rates(UNIFORM, [0.0, 2.0, 1.0]), expected)
        expected = np.zeros((3, 3))
        expected[1, 0], expected[2, 0], expected[1, 2] = 10.0, 5.0, 5.0
        assert np.array_equal(smith_rates(UNIFORM, [5.0, -5.0, 0.0]), expected)

    def test_bnn(self):
        assert np.array_equal(bnn_rates(UNIFORM, [1, 1, 1]), np.zeros((3, 3)))
        assert np.array_equal(bnn_rates(VERTEX, [0.0, 1.0, 2.0]), np.tile([0.0, 1.0, 2.0], (3, 1)))
        assert np.array_equal(bnn_rates([0.0, 0.0, 1.0], [0.0, 1.0, 2.0]), np.zeros((3, 3)))

    def test_abr_sharpens_with_k(self):
        assert np.array_equal(abr_rates(UNIFORM, [2, 2, 2], 5, 0.1), np.zeros((3, 3)))
        soft = abr_rates(VERTEX, TOWARD_TWO, 1, 0.1)
        assert np.allclose(soft[:, 1], 1.0 / 1.1)
        assert np.allclose(soft[:, [0, 2]], 0.0)
        sharp = abr_rates(VERTEX, TOWARD_TWO, 5, 0.1)
        assert np.allclose(sharp[:, 1], 1.0 / (1.0 + 1e-5))

    def test_replicator(self):
        x = np.array([0.5, 0.5, 0.0])
        rates = replicator_rates(x, TOWARD_TWO)
        assert rates[0, 1] == pytest.approx(0.5)
        assert rates[2, 1] == pytest.approx(0.5)
        assert rates[1, 0] == 0.0 and rates[2, 0] == 0.0
        assert np.array_equal(replicator_rates(UNIFORM, [1, 1, 1]), np.zeros((3, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            smith_rates(UNIFORM, [1.0, 2.0])


class TestHybridRules:
    def test_replicator_smith_formula(self):
        x = np.array([0.2, 0.3, 0.5])
        p = np.array([0.3, -1.0, 0.7])
        gains = np.maximum(p[None, :] - p[:, None], 0.0)
        expected = x[None, :] * gains + 0.01 * gains
        assert np.allclose(hybrid_rates(preset_rule("replicator_smith"), x, p), expected, atol=1e-15)

    def test_smith_only_equals_smith(self):
        x = np.array([0.2, 0.3, 0.5])
        p = np.array([0.3, -1.0, 0.7])
        spec = RuleSpec(alpha_CO=1.0, co_rule=CORule.SMITH)
        assert np.array_equal(hybrid_rates(spec, x, p), smith_rates(x, p))

    def test_smith_abr_formula(self):
        x = np.array([0.2, 0.3, 0.5])
        p = np.array([0.3, -1.0, 0.7])
        gains = np.maximum(p[None, :] - p[:, None], 0.0)
        excess = np.maximum(p - p @ x, 0.0)
        ep = excess ** 5 / (np.sum(excess ** 5) + 1e-5)
        expected = 0.01 * gains + np.tile(ep, (3, 1))
        assert np.allclose(hybrid_rates(preset_rule("smith_abr"), x, p), expected, atol=1e-12)

    def test_blended_hybrid_is_the_weighted_sum_of_its_members(self):
        x = np.array([0.1, 0.6, 0.3])
        p = np.array([1.0, 0.0, -0.5])
        expected = (
            0.2 * hybrid_rates(preset_rule("squared_hybrid"), x, p)
            + 3.0 * hybrid_rates(preset_rule("replicator_smith"), x, p)
            + 40.0 * hybrid_rates(preset_rule("smith_abr"), x, p)
        )
        assert np.allclose(hybrid_rates(preset_rule("blended_hybrid"), x, p), expected, atol=1e-12)
        total = sum(w * value for w, _, value in component_correlations(preset_rule("blended_hybrid"), x, p))
        assert total == pytest.approx(correlation(preset_rule("blended_hybrid"), x, p), abs=1e-10)

    def test_pure_imitation_is_rejected_with_a_cone_message(self):
        with pytest.raises(InvalidRuleSpec, match="alpha_CO \\+ alpha_EP > 0"):
            RuleSpec(alpha_I=1.0, name="imitation_only")

    def test_negative_weight_is_rejected(self):
        with pytest.raises(InvalidRuleSpec):
            RuleSpec(alpha_CO=-1.0)

    def test_bad_abr_parameters_are_rejected(self):
        with pytest.raises(InvalidRuleSpec):
            RuleSpec(alpha_EP=1.0, ep_rule=EPRule.ABR, abr_k=0)
        with pytest.raises(InvalidRuleSpec):
            RuleSpec(alpha_EP=1.0, ep_rule=EPRule.ABR, abr_eps=1.5)

    def test_user_rule_needs_a_callable(self):
        with pytest.raises(InvalidRuleSpec):
            RuleSpec(alpha_CO=1.0, alpha_tilde=1.0)

    def test_unknown_preset(self):
        with pytest.raises(InvalidRuleSpec, match="Unknown rule preset"):
            preset_rule("logit")

    def test_every_preset_builds(self):
        for name in PRESET_NAMES:
            assert preset_rule(name).name == name


class TestFieldAndCorrelation:
    def test_uniform_payoff_gives_no_motion(self):
        smith = preset_rule("smith")
        for x in sample_simplex(3, 20, np.random.default_rng(3)):
            assert np.array_equal(np.asarray(edm_field(smith, x, [0.4, 0.4, 0.4])), np.zeros(3))
            assert correlation(smith, x, [0.4, 0.4, 0.4]) == 0.0
            assert tellegen_decomposition(smith, x, [0.4, 0.4, 0.4]) == 0.0

    def test_smith_at_a_vertex(self):
        smith = preset_rule("smith")
        assert np.allclose(np.asarray(edm_field(smith, VERTEX, TOWARD_TWO)), [-1.0, 1.0, 0.0])
        assert correlation(smith, VERTEX, TOWARD_TWO) == pytest.approx(1.0)
        assert tellegen_decomposition(smith, VERTEX, TOWARD_TWO) == pytest.approx(1.0)

    def test_replicator_rests_at_a_vertex_that_is_not_a_best_response(self):
        replicator = preset_rule("replicator")
        assert np.allclose(np.asarray(edm_field(replicator, VERTEX, TOWARD_TWO)), 0.0)

    def test_best_response_has_zero_correlation(self):
        smith = preset_rule("smith")
        assert correlation(smith, TOWARD_TWO, TOWARD_TWO) == 0.0
        assert np.array_equal(np.asarray(edm_field(smith, TOWARD_TWO, TOWARD_TWO)), np.zeros(3))

    def test_field_conserves_mass(self, rng):
        for name in PC_RULES:
            spec = preset_rule(name)
            for x, p in zip(sample_simplex(4, 50, rng), rng.uniform(-1, 1, size=(50, 4))):
                assert abs(np.asarray(edm_field(spec, x, p)).sum()) <= 1e-10

    def test_compiled_rule_matches_the_field(self, rng, random_rule):
        specs = [preset_rule(name) for name in PC_RULES] + [random_rule(rng) for _ in range(10)]
        specs.append(RuleSpec(mixture=((0.5, specs[0]), (2.0, specs[-1]), (1.0, specs[-1])), name="nested"))
        for spec in specs:
            compiled = CompiledRule(spec)
            for x, p in zip(sample_simplex(4, 20, rng), rng.uniform(-1, 1, size=(20, 4))):
                assert np.allclose(compiled.rates(x, p), hybrid_rates(spec, x, p), atol=1e-12)
                assert np.allclose(compiled.velocity(x, p), edm_velocity(spec, x, p), atol=1e-12)


class TestSamplers:
    @pytest.mark.parametrize("name", PC_RULES)
    def test_positive_correlation(self, name):
        report = sample_positive_correlation(preset_rule(name), 3, samples=2000, rng=np.random.default_rng(11))
        assert report.passed, report.witness

    @pytest.mark.parametrize("name", [name for name in PC_RULES if name != "replicator"])
    def test_nash_stationarity(self, name):
        report = sample_nash_stationarity(preset_rule(name), 3, samples=2000, rng=np.random.default_rng(12))
        assert report.passed, report.witness

    def test_replicator_fails_nash_stationarity_with_a_witness(self):
        report = sample_nash_stationarity(preset_rule("replicator"), 3, samples=2000, rng=np.random.default_rng(13))
        assert report.verdict == "fail"
        assert report.witness is not None
        assert not report.witness["best_response"]
        assert report.witness["correlation"] <= 1e-9

    def test_tellegen_identity_on_random_rules(self, rng):
        for name in PC_RULES:
            report = sample_tellegen(preset_rule(name), 4, samples=1000, rng=rng)
            assert report.passed, report.witness

    @pytest.mark.slow
    @pytest.mark.parametrize("name", PC_RULES)
    def test_full_sample_budget(self, name):
        spec = preset_rule(name)
        assert sample_positive_correlation(spec, 3, rng=np.random.default_rng(21)).passed
        assert sample_tellegen(spec, 3, rng=np.random.default_rng(22)).passed


class TestImitationMonotonicity:
    def test_canonical_imitation_forms_are_monotone(self, rng):
        states = sample_simplex(3, 200, rng)
        payoffs = sample_payoff_lattice(3, 0.5, 2.0, 200, rng)
        for x, p in zip(states, payoffs):
            assert imitation_monotonicity_holds(replicator_psi, x, p)
            assert imitation_monotonicity_holds(squared_psi, x, p)

    def test_constant_psi_is_not_monotone(self):
        assert not imitation_monotonicity_holds(np.ones((3, 3)), UNIFORM, [0.0, 1.0, 2.0])
