"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line that the terminal summary prints (see
conftest.py).  Running this file directly prints the same lines.
"""

from __future__ import annotations

import random
import time

import numpy as np
import pytest

from aptree.aploss import LossConfig, alpha_auto, ap_loss, cross_entropy, scaling_factor
from aptree.asdl import load_grammar
from aptree.ast import ast_to_code, code_to_ast, validate_ast
from aptree.astvec import ast2vec, displacement, vec2parents, vec_norm
from aptree.corpus import _constants, generate_corpus, sample_tree, toy_grammar
from aptree.experiment import compare
from aptree.model import ModelConfig, SamplingSchedule, ScheduleMode, Seq2Tree, Vocab, grad_check, predict, train
from aptree.transition import (
    ANY_TOKEN, ActionStep, FrontierState, GenToken, actions_to_ast, actions_to_steps, ast_to_actions, parse_action,
    valid_actions,
)
from conftest import DATA, record
from treegen import random_tree


def check(n: int, ok: bool, detail: str) -> None:
    record(n, ok, detail)
    assert ok, detail


@pytest.fixture(scope="module")
def random_trees():
    g = load_grammar(DATA / "mixed.asdl")
    rng = random.Random(2024)
    return g, [random_tree(g, rng, max_nodes=200) for _ in range(10_000)]


def test_criterion_01_reconstruction(random_trees):
    g, trees = random_trees
    start = time.perf_counter()
    bad_parents = bad_unique = 0
    for tree in trees:
        steps = ast_to_actions(g, tree)
        vecs = ast2vec(steps)
        bad_parents += vec2parents(vecs) != [s.parent_index - 1 for s in steps]
        bad_unique += len(set(vecs)) != len(vecs)
    elapsed = time.perf_counter() - start
    biggest = max(len(ast_to_actions(g, t)) for t in trees[:2000])
    check(1, bad_parents == 0 and bad_unique == 0 and elapsed < 30,
          f"10000 trees (largest sampled {biggest} nodes): {bad_parents} parent mismatches, "
          f"{bad_unique} duplicate vectors, {elapsed:.1f}s")


def test_criterion_02_norm_monotonic(random_trees):
    g, trees = random_trees
    pairs = violations = 0
    for tree in trees:
        steps = ast_to_actions(g, tree)
        vecs = ast2vec(steps)
        for s in steps[1:]:
            pairs += 1
            violations += not vec_norm(vecs[s.parent_index - 1]) < vec_norm(vecs[s.t - 1])
    check(2, violations == 0, f"{pairs} parent-child pairs, {violations} with parent norm >= child norm")


def test_criterion_03_worked_anchor():
    g = load_grammar(DATA / "worked.asdl")
    steps = actions_to_steps(g, [parse_action(l) for l in (DATA / "worked.actions").read_text().split()])
    vecs = ast2vec(steps)
    ok = vecs[8] == (3, 3) and vecs[9] == (4, 3) and displacement(vecs[8], vecs[9]) == (1, 0)
    check(3, ok, f"node 8 -> {tuple(vecs[8])}, node 9 -> {tuple(vecs[9])}, "
                 f"displacement {displacement(vecs[8], vecs[9])}")


def test_criterion_04_scaling_factor():
    exact = scaling_factor(10, 2) == 0.01
    flat = all(scaling_factor(f, 0) == 1 for f in (0.5, 1, 2, 10, 1e9))
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 60))
        lp = list(np.log(rng.uniform(1e-8, 1.0, size=T)))
        steps = [ActionStep(1, parse_action("APPLY[X]"), 0)] + [
            ActionStep(t, parse_action("APPLY[X]"), int(rng.integers(1, t))) for t in range(2, T + 1)]
        worst = max(worst, abs(ap_loss(lp, steps, LossConfig(gamma=0, alpha=1))[0] - cross_entropy(lp)))
    check(4, exact and flat and worst == 0.0,
          f"f=10,g=2 -> {scaling_factor(10, 2)}; gamma=0 constant: {flat}; max |AP - CE| over 1000 = {worst}")


def test_criterion_05_auto_alpha():
    anchors = [(0.4, 19.3, 1.96), (0.1, 31.5, 1.27), (0.4, 14.4, 1.75), (0.1, 23.2, 1.23)]
    got = [alpha_auto(g, T) for g, T, _ in anchors]
    ok = all(abs(a - e) <= 0.01 for a, (_, _, e) in zip(got, anchors))
    check(5, ok, "; ".join(f"({g}, {T}) -> {a:.4f} vs {e}" for a, (g, T, e) in zip(got, anchors)))


def test_criterion_06_round_trips():
    g = toy_grammar()
    rng = random.Random(6)
    start = time.perf_counter()
    trees = [_constants(sample_tree(g, rng, max_depth=rng.randint(1, 5)), rng) for _ in range(10_000)]
    failures = steps_total = steps_outside = 0
    for tree in trees:
        code = ast_to_code(tree)
        failures += ast_to_code(code_to_ast(g, code)) != code
        for trav in ("preorder", "bfs"):
            steps = ast_to_actions(g, tree, trav)
            failures += actions_to_ast(g, steps, trav) != tree
            state = FrontierState(g, trav)
            for s in steps:
                allowed = valid_actions(g, state)
                steps_total += 1
                steps_outside += not (s.action in allowed or (isinstance(s.action, GenToken) and ANY_TOKEN in allowed))
                state.apply(s.action)
    elapsed = time.perf_counter() - start
    check(6, failures == 0 and steps_outside == 0 and elapsed < 60,
          f"10000 trees x 2 traversals: {failures} round-trip failures, {steps_outside}/{steps_total} "
          f"teacher-forcing steps outside the valid set, {elapsed:.1f}s")


def test_criterion_07_gradients():
    g = toy_grammar()
    ex = next(e for e in generate_corpus(g, n=40, seed=11, max_depth=2).examples if 6 <= len(e.actions) <= 8)
    model = Seq2Tree(g, Vocab.build([ex]), ModelConfig(word_dim=6, action_dim=6, hidden=8, seed=0))
    vocab = len(model.vocab.nl) + len(model.vocab.tokens)
    start = time.perf_counter()
    ce = grad_check(model, ex, LossConfig.cross_entropy())
    ap = grad_check(model, ex, LossConfig(gamma=0.3, alpha=2.0))
    elapsed = time.perf_counter() - start
    check(7, ce < 1e-4 and ap < 1e-4 and vocab <= 30 and elapsed < 120,
          f"{len(ex.actions)}-action example, vocab {vocab}, {model.n_parameters()} params: "
          f"max rel err CE {ce:.2e}, AP {ap:.2e}, {elapsed:.1f}s")


def test_criterion_08_grammatical_outputs():
    g = toy_grammar()
    ds = generate_corpus(g, n=700, seed=8, split=(200, 0, 500))
    start = time.perf_counter()
    model = Seq2Tree(g, Vocab.build(ds.split("train")), ModelConfig(hidden=32, word_dim=16, action_dim=16, seed=0))
    train(model, ds.split("train"), epochs=2)
    bad = 0
    for ex in ds.split("test"):
        try:
            p = predict(model, ex.nl, beam=5)
            bad += p.code is None or not validate_ast(g, code_to_ast(g, p.code)).ok
        except Exception:
            bad += 1
    elapsed = time.perf_counter() - start
    check(8, bad == 0 and elapsed < 300, f"500 beam-5 outputs, {bad} not convertible to a valid AST, {elapsed:.1f}s")


def test_criterion_09_directional_experiment():
    start = time.perf_counter()
    result = compare(LossConfig.cross_entropy(), LossConfig(gamma=0.3, alpha=2.0, factor_mode="astvec"),
                     seeds=(0, 1, 2, 3, 4), epochs=30, beam=5)
    elapsed = time.perf_counter() - start
    wins = result.wins(10)
    em_ce, em_ap = result.mean_em(result.baseline), result.mean_em(result.treatment)
    per_seed = ", ".join(f"s{b.seed} {t.report.prefix_actions[10]:.2f}/{b.report.prefix_actions[10]:.2f}"
                         for b, t in zip(result.baseline, result.treatment))
    check(9, wins >= 4 and em_ap >= em_ce - 0.01,
          f"prefix-EM@10% AP/CE per seed: {per_seed}; AP wins {wins}/5; mean EM AP {em_ap:.3f} vs CE {em_ce:.3f}; "
          f"{elapsed / 10:.0f}s per run")


def test_criterion_10_sampling_schedules():
    g = toy_grammar()
    data = generate_corpus(g, n=30, seed=10).split("train")
    runs = []
    for sched in (SamplingSchedule(), SamplingSchedule(ScheduleMode.FIXED, p=1.0)):
        m = Seq2Tree(g, Vocab.build(data), ModelConfig(hidden=8, word_dim=6, action_dim=6, seed=1))
        log = train(m, data, LossConfig(gamma=0.3), sched, epochs=2)
        runs.append((m.params, [(e.loss, e.train_em) for e in log]))
    identical = all(np.array_equal(runs[0][0][k], runs[1][0][k]) for k in runs[0][0]) and runs[0][1] == runs[1][1]
    ed = SamplingSchedule(ScheduleMode.EXPONENTIAL, base=0.99)
    ed_ok = all(ed.prob(k, 30) == 0.99 ** k for k in range(30))
    check(10, identical and ed_ok, f"Fixed(1) bit-identical to teacher forcing: {identical}; ED(0.99) p=0.99^k: {ed_ok}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
