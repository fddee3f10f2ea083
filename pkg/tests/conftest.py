import os
import sys

import numpy as np
import pytest

# Modules live flat at the repository root
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from payoffs import affine_game, filtered_potential_mechanism, memoryless_mechanism  # noqa: E402
from rules import CORule, EPRule, IRule, RuleSpec, preset_rule  # noqa: E402

FILTERED_STARTS = {
    "c": [0.0, 1.0, 0.0],
    "d": [0.7, 0.3, 0.0],
    "e": [0.0, 0.2, 0.8],
    "f": [0.6, 0.0, 0.4],
}
UNIFORM = np.full(3, 1.0 / 3.0)
SKEW = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def base_game():
    return affine_game(-np.eye(3), np.ones(3), name="one_minus_x")


@pytest.fixture
def filtered_mechanism(base_game):
    return filtered_potential_mechanism(base_game, 5.0, -1.0, np.diag([0.0, 1.0, 1.0]), [-0.4, 0.0, 0.0], name="filtered_one_minus_x")


@pytest.fixture
def filtered_rules():
    return [preset_rule(name) for name in ("bnn", "smith", "replicator_smith")]


@pytest.fixture
def skew_mechanism():
    return memoryless_mechanism(affine_game(SKEW, np.zeros(3), name="skew"))


@pytest.fixture
def random_rule():
    """Factory drawing a hybrid rule with random forms and weights from a generator."""

    def draw(rng, name="random"):
        return RuleSpec(
            alpha_I=float(rng.uniform(0.0, 1.0)),
            alpha_CO=float(rng.uniform(0.1, 1.0)),
            alpha_EP=float(rng.uniform(0.1, 1.0)),
            i_rule=list(IRule)[rng.integers(2)],
            co_rule=list(CORule)[rng.integers(2)],
            ep_rule=list(EPRule)[rng.integers(3)],
            abr_k=int(rng.integers(1, 4)),
            abr_eps=float(rng.uniform(0.1, 0.5)),
            name=name,
        )

    return draw
