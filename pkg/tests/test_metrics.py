import random

import pytest
from hypothesis import given, settings, strategies as st
from nltk.translate.bleu_score import corpus_bleu

from aptree.metrics import bleu4, evaluate, exact_match, prefix_length, prefix_match

VOCAB = ["(", ")", "len:i", "r0", "r1", "and", "loc:t", "$0", "texas:c"]


def test_exact_match_ignores_spacing():
    assert exact_match("(len:i r0)", "( len:i r0 )") == 1
    assert exact_match("( len:i r1 )", "( len:i r0 )") == 0


def test_prefix_lengths_round_up():
    assert prefix_length(20, 10) == 2
    assert prefix_length(7, 10) == 1
    assert prefix_length(7, 50) == 4
    assert prefix_length(1, 5) == 1


def test_prefix_match():
    gold = list("abcdefghij")
    assert prefix_match(list("abXXXXXXXX"), gold, 20) == 1
    assert prefix_match(list("abXXXXXXXX"), gold, 50) == 0
    assert prefix_match(list("a"), gold, 20) == 0
    assert prefix_match(gold, gold, 100) == 1
    with pytest.raises(ValueError):
        prefix_match([], [], 10)
    with pytest.raises(ValueError):
        prefix_match(gold, gold, 0)


def test_bleu_identity_and_zero():
    refs = [["(", "len:i", "r0", ")"], ["(", "and", "$0", "r1", ")"]]
    assert bleu4(refs, refs) == pytest.approx(1.0)
    assert bleu4([["x", "y", "z", "w"]] * 2, refs) == 0.0
    with pytest.raises(ValueError):
        bleu4([], [])


sentences = st.lists(st.sampled_from(VOCAB), min_size=4, max_size=15)


@pytest.mark.filterwarnings("ignore::UserWarning")
@settings(max_examples=200)
@given(st.lists(st.tuples(sentences, sentences), min_size=1, max_size=8))
def test_bleu_matches_nltk(pairs):
    preds = [p for p, _ in pairs]
    refs = [r for _, r in pairs]
    ours = bleu4(preds, refs)
    theirs = corpus_bleu([[r] for r in refs], preds)
    assert ours == pytest.approx(theirs, abs=1e-12)


def test_bleu_is_order_invariant():
    rng = random.Random(0)
    pairs = [([rng.choice(VOCAB) for _ in range(8)], [rng.choice(VOCAB) for _ in range(8)]) for _ in range(20)]
    base = bleu4([p for p, _ in pairs], [r for _, r in pairs])
    rng.shuffle(pairs)
    assert bleu4([p for p, _ in pairs], [r for _, r in pairs]) == pytest.approx(base, abs=1e-15)


def test_evaluate_report():
    gold = ["( len:i r0 )", "( place:t $0 )"]
    pred = ["( len:i r0 )", "( place:t $1 )"]
    acts_gold = [["A", "B", "C"], ["A", "D", "E"]]
    acts_pred = [["A", "B", "C"], ["A", "X", "E"]]
    r = evaluate(pred, gold, acts_pred, acts_gold)
    assert r.count == 2 and r.em == 0.5
    assert r.prefix_actions == {5: 1.0, 10: 1.0, 20: 1.0, 50: 0.5}
    assert r.prefix_code[5] == 1.0
    assert "EM" in r.table() and r.as_dict()["em"] == 0.5
    with pytest.raises(ValueError):
        evaluate([], [])
    with pytest.raises(ValueError):
        evaluate(["a"], [])
