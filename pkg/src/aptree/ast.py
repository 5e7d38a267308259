"""Typed ASTs, grammar validation and the s-expression code surface."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

from .asdl import Cardinality, Constructor, Grammar


@dataclass(frozen=True)
class Token:
    value: str

    def __repr__(self) -> str:
        return f"Token({self.value!r})"


@dataclass(frozen=True)
class Node:
    """Constructor application; ``fields`` pairs each field name with its children."""

    ctor: str
    fields: tuple[tuple[str, tuple["AstNode", ...]], ...] = ()

    def children(self, name: str) -> tuple["AstNode", ...]:
        for fname, kids in self.fields:
            if fname == name:
                return kids
        raise KeyError(name)

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}={list(k)!r}" for n, k in self.fields)
        return f"{self.ctor}({inner})"


AstNode = Union[Node, Token]


def node(ctor: str, **fields: Sequence[AstNode] | AstNode) -> Node:
    """Convenience builder: ``node("Len", arg=node("Var", name=Token("r0")))``."""
    packed = []
    for name, kids in fields.items():
        if isinstance(kids, (Node, Token)):
            kids = (kids,)
        packed.append((name, tuple(kids)))
    return Node(ctor, tuple(packed))


def iter_preorder(root: AstNode) -> Iterator[AstNode]:
    stack = [root]
    while stack:
        cur = stack.pop()
        yield cur
        if isinstance(cur, Node):
            for _, kids in reversed(cur.fields):
                stack.extend(reversed(kids))


def tree_size(root: AstNode) -> int:
    return sum(1 for _ in iter_preorder(root))


def to_json(root: AstNode) -> dict:
    if isinstance(root, Token):
        return {"token": root.value}
    return {"ctor": root.ctor, "fields": {n: [to_json(k) for k in kids] for n, kids in root.fields}}


def from_json(obj: Mapping) -> AstNode:
    if "token" in obj:
        return Token(str(obj["token"]))
    return Node(obj["ctor"], tuple((n, tuple(from_json(k) for k in kids)) for n, kids in obj["fields"].items()))


# --- validation -------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    node_id: int | None = None
    rule: str | None = None
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


class _Violation(Exception):
    def __init__(self, node_id: int, rule: str, message: str):
        super().__init__(message)
        self.node_id, self.rule, self.message = node_id, rule, message


def _check(grammar: Grammar, cur: AstNode, expected: str, counter: list[int]) -> None:
    node_id = counter[0]
    counter[0] += 1
    if grammar.is_primitive(expected):
        if not isinstance(cur, Token):
            raise _Violation(node_id, "child-type", f"expected a {expected} token, found {cur.ctor}")
        return
    if not isinstance(cur, Node):
        raise _Violation(node_id, "child-type", f"expected a {expected} node, found token {cur.value!r}")
    ctor = grammar.constructors.get(cur.ctor)
    if ctor is None:
        raise _Violation(node_id, "unknown-constructor", f"unknown constructor {cur.ctor!r}")
    if ctor.type != expected:
        raise _Violation(node_id, "child-type", f"{cur.ctor} builds {ctor.type}, expected {expected}")
    names = [n for n, _ in cur.fields]
    if names != [f.name for f in ctor.fields]:
        raise _Violation(node_id, "fields", f"{cur.ctor} has fields {names}, expected {[f.name for f in ctor.fields]}")
    for f, (_, kids) in zip(ctor.fields, cur.fields):
        n = len(kids)
        if (f.cardinality is Cardinality.SINGLE and n != 1) or (f.cardinality is Cardinality.OPTIONAL and n > 1):
            raise _Violation(node_id, "cardinality", f"{cur.ctor}.{f.name} ({f.cardinality.value}) has {n} children")
        for kid in kids:
            _check(grammar, kid, f.type, counter)


def validate_ast(grammar: Grammar, root: AstNode) -> ValidationReport:
    """Check ``root`` against ``grammar``; node ids in the report are pre-order positions."""
    try:
        _check(grammar, root, grammar.root_type, [0])
    except _Violation as v:
        return ValidationReport(False, v.node_id, v.rule, v.message)
    return ValidationReport(True)


# --- code surface -----------------------------------------------------------


class CodeError(ValueError):
    """Tokenization, unknown head symbol, arity mismatch or missing template."""


_LEX = re.compile(r"\(|\)|[^\s()]+")


def tokenize_code(code: str) -> list[str]:
    return _LEX.findall(code)


def normalize_code(code: str) -> str:
    return " ".join(tokenize_code(code))


def _default_heads() -> Mapping[str, str]:
    from .corpus import TOY_HEADS

    return TOY_HEADS


def _is_bare(head: str) -> bool:
    return "{}" in head


def ast_to_code(root: AstNode, heads: Mapping[str, str] | None = None) -> str:
    """Render an AST as normalized s-expression text.

    ``heads`` maps constructor names to a head symbol (``"len:i"`` renders
    ``( len:i ... )``) or a bare pattern such as ``"{}"`` / ``"{}:c"`` for
    constructors holding a single token.
    """
    heads = _default_heads() if heads is None else heads
    out: list[str] = []

    def emit(cur: AstNode) -> None:
        if isinstance(cur, Token):
            out.append(cur.value)
            return
        head = heads.get(cur.ctor)
        if head is None:
            raise CodeError(f"no rendering template for constructor {cur.ctor!r}")
        kids = [k for _, ks in cur.fields for k in ks]
        if _is_bare(head):
            if len(kids) != 1 or not isinstance(kids[0], Token):
                raise CodeError(f"bare constructor {cur.ctor} needs exactly one token child")
            out.append(head.replace("{}", kids[0].value))
            return
        out.append("(")
        out.append(head)
        for k in kids:
            emit(k)
        out.append(")")

    emit(root)
    return " ".join(out)


def _parse_sexpr(code: str) -> Union[str, list]:
    toks = tokenize_code(code)
    if not toks:
        raise CodeError("empty code")
    pos = 0

    def item():
        nonlocal pos
        if pos >= len(toks):
            raise CodeError("unexpected end of code")
        tok = toks[pos]
        pos += 1
        if tok == ")":
            raise CodeError(f"unbalanced ')' at token {pos - 1}")
        if tok != "(":
            return tok
        out = []
        while True:
            if pos >= len(toks):
                raise CodeError("missing ')'")
            if toks[pos] == ")":
                pos += 1
                return out
            out.append(item())

    tree = item()
    if pos != len(toks):
        raise CodeError(f"trailing tokens after position {pos}")
    return tree


class _Reader:
    def __init__(self, grammar: Grammar, heads: Mapping[str, str]):
        self.grammar = grammar
        self.by_head: dict[str, Constructor] = {}
        self.bare: dict[str, list[tuple[re.Pattern, Constructor]]] = {}
        for name, head in heads.items():
            ctor = grammar.constructors.get(name)
            if ctor is None:
                continue
            if _is_bare(head):
                prefix, suffix = head.split("{}", 1)
                pat = re.compile(re.escape(prefix) + r"(.+)" + re.escape(suffix))
                self.bare.setdefault(ctor.type, []).append((pat, ctor))
            else:
                self.by_head[head] = ctor
        # more specific literal patterns first
        for pats in self.bare.values():
            pats.sort(key=lambda pc: -len(pc[0].pattern))

    def read(self, item, type_name: str) -> AstNode | None:
        """Interpret ``item`` as a value of ``type_name``; None if it cannot be one."""
        if self.grammar.is_primitive(type_name):
            return Token(item) if isinstance(item, str) else None
        if isinstance(item, str):
            for pat, ctor in self.bare.get(type_name, ()):
                m = pat.fullmatch(item)
                if m:
                    (field,) = ctor.fields
                    return Node(ctor.name, ((field.name, (Token(m.group(1)),)),))
            return None
        if not item or not isinstance(item[0], str):
            raise CodeError("expected a head symbol after '('")
        ctor = self.by_head.get(item[0])
        if ctor is None:
            raise CodeError(f"unknown head symbol {item[0]!r}")
        if ctor.type != type_name:
            return None
        assigned = self.assign(ctor.fields, item[1:])
        if assigned is None:
            raise CodeError(f"arity mismatch for {item[0]!r}: cannot fit {len(item) - 1} arguments to {ctor}")
        return Node(ctor.name, tuple((f.name, kids) for f, kids in zip(ctor.fields, assigned)))

    def assign(self, fields, items) -> list[tuple[AstNode, ...]] | None:
        if not fields:
            return [] if not items else None
        f, rest = fields[0], fields[1:]
        if f.cardinality is Cardinality.SINGLE:
            counts = [1]
        elif f.cardinality is Cardinality.OPTIONAL:
            counts = [1, 0]
        else:
            counts = range(len(items), -1, -1)
        for n in counts:
            if n > len(items):
                continue
            kids = []
            for it in items[:n]:
                val = self.read(it, f.type)
                if val is None:
                    break
                kids.append(val)
            else:
                tail = self.assign(rest, items[n:])
                if tail is not None:
                    return [tuple(kids)] + tail
        return None


def code_to_ast(grammar: Grammar, code: str, heads: Mapping[str, str] | None = None) -> AstNode:
    """Inverse of :func:`ast_to_code`; raises :class:`CodeError`."""
    heads = _default_heads() if heads is None else heads
    tree = _parse_sexpr(code)
    result = _Reader(grammar, heads).read(tree, grammar.root_type)
    if result is None:
        raise CodeError(f"code does not denote a {grammar.root_type}")
    return result
