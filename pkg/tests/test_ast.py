import json
import random

import pytest

from aptree.ast import (
    CodeError, Node, Token, ast_to_code, code_to_ast, from_json, node, normalize_code, to_json, tokenize_code,
    validate_ast,
)
from aptree.corpus import _constants, sample_tree

ARGMAX = "( argmax $0 ( and ( place:t $0 ) ( loc:t $0 c0 ) ) ( elevation:i $0 ) )"


def var(name):
    return node("Var", name=Token(name))


def pyexpr_tree():
    return node("Module", body=[node("Expr", value=node("Attribute", value=node("Name", id=Token("x")),
                                                          attr=Token("attr")))])


def test_pyexpr_tree_validates(pyexpr):
    assert validate_ast(pyexpr, pyexpr_tree()).ok


def test_token_root_is_a_violation_at_node_0(pyexpr):
    report = validate_ast(pyexpr, Token("x"))
    assert not report.ok and report.node_id == 0 and report.rule == "child-type"


def test_attribute_with_one_child_is_an_arity_violation(pyexpr):
    bad = node("Module", body=[node("Expr", value=Node("Attribute", (("value", (node("Name", id=Token("x")),)),
                                                                       ("attr", ()))))])
    report = validate_ast(pyexpr, bad)
    assert not report.ok and report.node_id == 2 and report.rule == "cardinality"


def test_other_violations(pyexpr):
    assert validate_ast(pyexpr, node("Module", body=[node("Bogus")])).rule == "unknown-constructor"
    # expr where stmt is required
    r = validate_ast(pyexpr, node("Module", body=[node("Name", id=Token("x"))]))
    assert (r.node_id, r.rule) == (1, "child-type")
    r = validate_ast(pyexpr, node("Module", body=[node("Expr", value=node("Name", id=node("Name", id=Token("x"))))]))
    assert (r.node_id, r.rule) == (3, "child-type")
    r = validate_ast(pyexpr, Node("Module", (("stuff", ()),)))
    assert r.rule == "fields"


def test_len_renders_in_lambda_form():
    assert ast_to_code(node("Len", arg=var("r0"))) == "( len:i r0 )"
    assert ast_to_code(var("c0")) == "c0"
    assert ast_to_code(node("Const", name=Token("texas"))) == "texas:c"


def test_code_to_ast_examples(toy):
    assert code_to_ast(toy, "( len:i r0 )") == node("Len", arg=var("r0"))
    tree = code_to_ast(toy, ARGMAX)
    assert tree.ctor == "Argmax" and len([k for _, ks in tree.fields for k in ks]) == 3
    assert validate_ast(toy, tree).ok
    loc = tree.children("domain")[0].children("conjuncts")[1]
    assert loc.children("place") == (var("c0"),)
    short = code_to_ast(toy, "( loc:t $0 )")
    assert short.children("place") == ()


@pytest.mark.parametrize("code, match", [
    ("", "empty"),
    ("   ", "empty"),
    ("( len:i r0", "missing"),
    ("( len:i r0 ) )", "trailing"),
    (") len:i", "unbalanced"),
    ("( foo r0 )", "unknown head"),
    ("( len:i r0 r1 )", "arity"),
    ("( place:t )", "arity"),
    ("( )", "head symbol"),
    ("r0", "does not denote"),
])
def test_code_errors(toy, code, match):
    with pytest.raises(CodeError, match=match):
        code_to_ast(toy, code)


def test_missing_template_is_an_error():
    with pytest.raises(CodeError, match="no rendering template"):
        ast_to_code(node("Mystery"), heads={})


def test_normalization():
    assert normalize_code("(len:i   r0)") == "( len:i r0 )"
    assert tokenize_code("(a (b c))") == ["(", "a", "(", "b", "c", ")", ")"]


def test_round_trip_on_random_toy_programs(toy):
    rng = random.Random(11)
    for _ in range(1000):
        tree = _constants(sample_tree(toy, rng, max_depth=rng.randint(1, 5)), rng)
        code = ast_to_code(tree)
        assert code_to_ast(toy, code) == tree
        assert normalize_code(code) == code
        assert tokenize_code(ast_to_code(code_to_ast(toy, "  " + code.replace(" ", "   ")))) == tokenize_code(code)


def test_json_round_trip(toy):
    tree = code_to_ast(toy, ARGMAX)
    blob = json.dumps(to_json(tree))
    assert from_json(json.loads(blob)) == tree
    assert to_json(Token("r0")) == {"token": "r0"}
    assert to_json(var("r0")) == {"ctor": "Var", "fields": {"name": [{"token": "r0"}]}}
