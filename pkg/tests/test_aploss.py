import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aptree.aploss import (
    AUTO, FactorMode, LossConfig, alpha_auto, ap_loss, cross_entropy, factor_curve, position_factor, resolve_alpha,
    scaling_factor, step_weights,
)
from aptree.transition import REDUCE, ActionStep, ApplyRule, ast_to_actions
from treegen import random_tree


def chain(n):
    return [ActionStep(t, ApplyRule("X"), t - 1) for t in range(1, n + 1)]


def flat(n):
    return [ActionStep(1, ApplyRule("X"), 0)] + [ActionStep(t, REDUCE, 1) for t in range(2, n + 1)]


def test_scaling_factor_anchors():
    assert scaling_factor(10, 2) == 0.01
    assert all(scaling_factor(f, 0) == 1 for f in (0.5, 1, 7, 1e6))
    assert all(scaling_factor(1, g) == 1 for g in (0.1, 0.3, 2))
    with pytest.raises(ValueError):
        scaling_factor(0, 1)


@pytest.mark.parametrize("gamma, T, expected", [(0.4, 19.3, 1.96), (0.1, 31.5, 1.27), (0.4, 14.4, 1.75),
                                                (0.1, 23.2, 1.23)])
def test_alpha_auto_anchors(gamma, T, expected):
    assert abs(alpha_auto(gamma, T) - expected) <= 0.01


def test_alpha_auto_edges():
    assert alpha_auto(0, 17) == 1
    assert alpha_auto(1, 10) == pytest.approx(10 / math.log(11))
    # alpha * integral_0^T t**-gamma dt == T, checked by midpoint quadrature
    T = 40.0
    for g in (0.2, 0.5):
        n = 400000
        mids = (np.arange(n) + 0.5) * T / n
        area = float(np.sum(mids ** -g) * T / n)
        assert alpha_auto(g, T) * area == pytest.approx(T, rel=1e-3)
    with pytest.raises(ValueError):
        alpha_auto(0.3, 0)


def test_position_factor_modes(worked):
    assert position_factor(chain(3), LossConfig(factor_mode=FactorMode.SIMPLE)) == [1, 2, 3]
    assert position_factor(chain(3), LossConfig())[0] == 1.0
    from test_astvec import WORKED_ACTIONS
    from aptree.transition import actions_to_steps, parse_action
    steps = actions_to_steps(worked, [parse_action(l) for l in WORKED_ACTIONS.read_text().split()])
    assert position_factor(steps, LossConfig())[9] == 5.0


def test_loss_examples():
    assert ap_loss([-1, -2, -3], chain(3), LossConfig.cross_entropy())[0] == 6
    cfg = LossConfig(gamma=1, alpha=1, factor_mode="simple")
    total, parts = ap_loss([-1, -1], chain(2), cfg)
    assert total == 1.5 and parts == [1.0, 0.5]
    assert ap_loss([-1, -1], chain(2), LossConfig(gamma=0.5, alpha=2))[0] == 4


def test_loss_errors():
    with pytest.raises(ValueError, match="log-probs"):
        ap_loss([-1], chain(2), LossConfig())
    with pytest.raises(ValueError, match="non-finite"):
        ap_loss([-1, -math.inf], chain(2), LossConfig())
    with pytest.raises(ValueError):
        ap_loss([], [], LossConfig())
    with pytest.raises(ValueError):
        LossConfig(gamma=-0.1)
    with pytest.raises(ValueError):
        LossConfig(alpha=0)
    with pytest.raises(ValueError):
        LossConfig(alpha="sometimes")


def test_reduces_to_cross_entropy_exactly():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        T = int(rng.integers(1, 40))
        lp = list(np.log(rng.uniform(1e-6, 1, size=T)))
        assert ap_loss(lp, flat(T), LossConfig.cross_entropy())[0] == cross_entropy(lp)


@given(st.lists(st.floats(-20, 0), min_size=1, max_size=30), st.floats(0.1, 10), st.floats(0, 2))
def test_linear_in_alpha(lp, c, gamma):
    base = ap_loss(lp, chain(len(lp)), LossConfig(gamma=gamma, alpha=1))[0]
    assert ap_loss(lp, chain(len(lp)), LossConfig(gamma=gamma, alpha=c))[0] == pytest.approx(c * base, rel=1e-12,
                                                                                              abs=1e-12)


def test_weights_decrease_along_paths(mixed):
    rng = random.Random(8)
    cfg = LossConfig(gamma=0.3, alpha=2)
    for _ in range(200):
        steps = ast_to_actions(mixed, random_tree(mixed, rng, max_nodes=80))
        ws = step_weights(steps, cfg)
        assert all(w > 0 and math.isfinite(w) for w in ws.weights)
        for s in steps[1:]:
            p = s.parent_index - 1
            child, parent = ws.weights[s.t - 1], ws.weights[p]
            assert child <= parent
            if ws.factors[p] > 1:
                assert child < parent


def test_heavier_gamma_shrinks_later_weights():
    steps = chain(20)
    lighter = step_weights(steps, LossConfig(gamma=0.1, alpha=1)).weights
    heavier = step_weights(steps, LossConfig(gamma=0.5, alpha=1)).weights
    assert all(h < l for h, l in zip(heavier[2:], lighter[2:]))


def test_auto_alpha_uses_sequence_length():
    cfg = LossConfig(gamma=0.4, alpha=AUTO)
    assert resolve_alpha(cfg, 19) == alpha_auto(0.4, 19)
    assert step_weights(chain(19), cfg).alpha == alpha_auto(0.4, 19)


def test_factor_curve():
    rows = factor_curve([0.5, 2], 10)
    assert len(rows) == 20
    assert rows[-1] == (10, 2, 0.01)
    assert rows[0] == (1, 0.5, 1.0)
