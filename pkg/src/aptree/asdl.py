"""ASDL-style grammar definitions.

Grammar text is line oriented::

    # comment
    primitive identifier, string
    root mod
    mod  = Module(stmt* body)
    stmt = Expr(expr value)
    expr = Attribute(expr value, identifier attr)
         | Name(identifier id)

A line starting with ``|`` continues the previous type's constructor list.
Fields are written ``type name`` with an optional ``?`` (optional) or ``*``
(multiple) suffix on the type.  Without a ``root`` directive the first
declared composite type is the root.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from types import MappingProxyType
from typing import Mapping


class Cardinality(str, Enum):
    SINGLE = "single"
    OPTIONAL = "optional"
    MULTIPLE = "multiple"

    @property
    def suffix(self) -> str:
        return {"single": "", "optional": "?", "multiple": "*"}[self.value]


class GrammarError(ValueError):
    """Raised for malformed or inconsistent grammar text."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


@dataclass(frozen=True)
class Field:
    name: str
    type: str
    cardinality: Cardinality = Cardinality.SINGLE

    def __str__(self) -> str:
        return f"{self.type}{self.cardinality.suffix} {self.name}"


@dataclass(frozen=True)
class Constructor:
    name: str
    type: str
    fields: tuple[Field, ...] = ()

    def __str__(self) -> str:
        return f"{self.name}({', '.join(map(str, self.fields))})"


@dataclass(frozen=True)
class Grammar:
    composite_types: frozenset[str]
    primitive_types: frozenset[str]
    constructors: Mapping[str, Constructor]
    root_type: str
    source: str = ""

    def is_primitive(self, type_name: str) -> bool:
        return type_name in self.primitive_types

    def constructors_of(self, type_name: str) -> tuple[Constructor, ...]:
        """Constructors producing ``type_name``, in declaration order."""
        return tuple(c for c in self.constructors.values() if c.type == type_name)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()[:16]

    def __str__(self) -> str:
        lines = [f"root {self.root_type}"]
        if self.primitive_types:
            lines.insert(0, "primitive " + ", ".join(sorted(self.primitive_types)))
        seen: list[str] = []
        for c in self.constructors.values():
            if c.type not in seen:
                seen.append(c.type)
        for t in seen:
            lines.append(f"{t} = " + " | ".join(str(c) for c in self.constructors_of(t)))
        return "\n".join(lines)


_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_TOKEN = re.compile(rf"\s*(?:(?P<name>{_NAME})|(?P<punct>[=|(),?*]))")


def _tokenize(text: str, lineno: int) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
            raise GrammarError(f"unexpected character {text[col - 1]!r}", lineno, col)
        tok = m.group("name") or m.group("punct")
        tokens.append((tok, m.start(m.lastgroup) + 1))
        pos = m.end()
    return tokens


class _LineParser:
    def __init__(self, tokens: list[tuple[str, int]], lineno: int, width: int):
        self.tokens = tokens
        self.i = 0
        self.lineno = lineno
        self.width = width

    def peek(self) -> str | None:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def error(self, message: str) -> GrammarError:
        col = self.tokens[self.i][1] if self.i < len(self.tokens) else self.width + 1
        return GrammarError(message, self.lineno, col)

    def take(self, expected: str | None = None) -> str:
        tok = self.peek()
        if tok is None:
            raise self.error(f"expected {expected or 'token'}, found end of line")
        if expected is not None and tok != expected:
            raise self.error(f"expected {expected!r}, found {tok!r}")
        self.i += 1
        return tok

    def name(self, what: str) -> tuple[str, int]:
        tok = self.peek()
        if tok is None or not re.fullmatch(_NAME, tok):
            raise self.error(f"expected {what}")
        col = self.tokens[self.i][1]
        self.i += 1
        return tok, col

    def constructors(self) -> list[tuple[str, int, list[tuple[Field, int]]]]:
        out = [self.constructor()]
        while self.peek() == "|":
            self.take("|")
            out.append(self.constructor())
        if self.peek() is not None:
            raise self.error(f"unexpected {self.peek()!r}")
        return out

    def constructor(self) -> tuple[str, int, list[tuple[Field, int]]]:
        name, col = self.name("constructor name")
        fields: list[tuple[Field, int]] = []
        if self.peek() == "(":
            self.take("(")
            if self.peek() != ")":
                fields.append(self.field())
                while self.peek() == ",":
                    self.take(",")
                    fields.append(self.field())
            self.take(")")
        return name, col, fields

    def field(self) -> tuple[Field, int]:
        type_name, col = self.name("field type")
        card = Cardinality.SINGLE
        if self.peek() == "?":
            self.take()
            card = Cardinality.OPTIONAL
        elif self.peek() == "*":
            self.take()
            card = Cardinality.MULTIPLE
        field_name, _ = self.name("field name")
        return Field(field_name, type_name, card), col


def parse_grammar(text: str) -> Grammar:
    """Parse and validate grammar text; raises :class:`GrammarError`."""
    primitives: dict[str, int] = {}
    root: tuple[str, int, int] | None = None
    # type name -> (line, col) of its definition
    definitions: dict[str, tuple[int, int]] = {}
    ctor_list: list[tuple[str, str, list[tuple[Field, int]], int, int]] = []
    current_type: str | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip()
        indent = len(line) - len(stripped)
        head = stripped.split(None, 1)[0]

        if head == "primitive":
            rest = stripped[len("primitive"):]
            names = [n.strip() for n in rest.split(",")]
            offset = indent + len("primitive") + 1
            for n in names:
                if not re.fullmatch(_NAME, n):
                    raise GrammarError(f"bad primitive type name {n!r}", lineno, offset + 1)
                if n in primitives:
                    raise GrammarError(f"primitive type {n!r} declared twice", lineno)
                primitives[n] = lineno
            current_type = None
            continue
        if head == "root":
            parts = stripped.split()
            if len(parts) != 2 or not re.fullmatch(_NAME, parts[1]):
                raise GrammarError("expected 'root TypeName'", lineno, indent + 1)
            if root is not None:
                raise GrammarError("root declared twice", lineno, indent + 1)
            root = (parts[1], lineno, indent + len("root") + 2)
            current_type = None
            continue

        tokens = _tokenize(line, lineno)
        p = _LineParser(tokens, lineno, len(line))
        if tokens[0][0] == "|":
            if current_type is None:
                raise GrammarError("continuation line without a type definition", lineno, tokens[0][1])
            p.take("|")
            type_name = current_type
        else:
            type_name, col = p.name("type name")
            p.take("=")
            if type_name in definitions:
                raise GrammarError(f"type {type_name!r} defined twice", lineno, col)
            definitions[type_name] = (lineno, col)
            current_type = type_name
        for name, col, fields in p.constructors():
            ctor_list.append((name, type_name, fields, lineno, col))

    if not definitions:
        raise GrammarError("no root type: grammar defines no composite types")

    for t, (lineno, col) in definitions.items():
        if t in primitives:
            raise GrammarError(f"type {t!r} is both primitive and composite", lineno, col)

    constructors: dict[str, Constructor] = {}
    for name, type_name, fields, lineno, col in ctor_list:
        if name in constructors:
            raise GrammarError(f"duplicate constructor {name!r}", lineno, col)
        seen: set[str] = set()
        for f, fcol in fields:
            if f.type not in definitions and f.type not in primitives:
                raise GrammarError(f"undeclared type {f.type!r} in {name}", lineno, fcol)
            if f.name in seen:
                raise GrammarError(f"duplicate field name {f.name!r} in {name}", lineno, fcol)
            seen.add(f.name)
        constructors[name] = Constructor(name, type_name, tuple(f for f, _ in fields))

    if root is None:
        root_type = next(iter(definitions))
    else:
        root_type, lineno, col = root
        if root_type not in definitions:
            raise GrammarError(f"root type {root_type!r} is not a declared composite type", lineno, col)

    return Grammar(
        composite_types=frozenset(definitions),
        primitive_types=frozenset(primitives),
        constructors=MappingProxyType(constructors),
        root_type=root_type,
        source=text,
    )


def load_grammar(path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return parse_grammar(fh.read())
