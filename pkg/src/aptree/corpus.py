"""Toy GEO-style lambda-form grammar and a synthetic NL/code corpus."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .asdl import Cardinality, Grammar, parse_grammar
from .ast import AstNode, Node, Token, ast_to_code, code_to_ast, tree_size
from .transition import ActionStep, FrontierState, action_is_allowed, actions_to_ast, ast_to_actions

TOY_GRAMMAR_TEXT = """\
primitive identifier
root expr
expr = Len(var arg)
     | Argmax(var bound, expr domain, expr key)
     | And(expr* conjuncts)
     | Loc(var arg, var? place)
     | Place(var arg)
     | Elevation(var arg)
var  = Var(identifier name)
     | Const(identifier name)
"""


@dataclass(frozen=True)
class Template:
    """NL pattern and code head for one constructor.

    ``nl`` uses ``{field}`` slots; a multiple-cardinality slot joins its
    children with ``joiner``, and ``empty`` is used when an optional or
    multiple field has no children.
    """

    ctor: str
    nl: str
    head: str
    joiner: str = "and"
    empty: Mapping[str, str] = field(default_factory=dict)


TOY_TEMPLATES: tuple[Template, ...] = (
    Template("Len", "what length is the {arg}", "len:i"),
    Template("Argmax", "which {bound} where {domain} has the highest {key}", "argmax"),
    Template("And", "{conjuncts}", "and", joiner="and", empty={"conjuncts": "anything"}),
    Template("Loc", "{arg} is located in {place}", "loc:t", empty={"place": "somewhere"}),
    Template("Place", "{arg} is a place", "place:t"),
    Template("Elevation", "the elevation of {arg}", "elevation:i"),
    Template("Var", "{name}", "{}"),
    Template("Const", "{name}", "{}:c"),
)

TOY_HEADS: Mapping[str, str] = {t.ctor: t.head for t in TOY_TEMPLATES}

VARIABLE_NAMES = ("$0", "$1", "$2", "r0", "r1", "r2", "c0", "c1", "c2")
CONSTANT_NAMES = ("texas", "ohio", "utah", "iowa", "maine", "boston", "austin", "dallas",
                  "denver", "miami", "mississippi", "colorado", "everest", "alaska", "nevada")

SYNONYMS = {
    "what": ("which",),
    "length": ("size", "extent"),
    "highest": ("largest", "greatest"),
    "located": ("situated", "found"),
    "place": ("location",),
    "elevation": ("height", "altitude"),
}

_TOY_GRAMMAR: Grammar | None = None


def toy_grammar() -> Grammar:
    global _TOY_GRAMMAR
    if _TOY_GRAMMAR is None:
        _TOY_GRAMMAR = parse_grammar(TOY_GRAMMAR_TEXT)
    return _TOY_GRAMMAR


class CorpusError(ValueError):
    pass


def check_templates(grammar: Grammar, templates: Sequence[Template]) -> None:
    by_ctor = {}
    for t in templates:
        if t.ctor in by_ctor:
            raise CorpusError(f"constructor {t.ctor} has more than one template")
        by_ctor[t.ctor] = t
    for name, ctor in grammar.constructors.items():
        t = by_ctor.get(name)
        if t is None:
            raise CorpusError(f"no template for constructor {name}")
        slots = {f.name for f in ctor.fields}
        found = {s for s in slots if "{" + s + "}" in t.nl}
        if found != slots:
            raise CorpusError(f"template for {name} has slots {sorted(found)}, fields are {sorted(slots)}")


def render_nl(root: AstNode, templates: Sequence[Template]) -> list[str]:
    by_ctor = {t.ctor: t for t in templates}

    def words(cur: AstNode) -> list[str]:
        if isinstance(cur, Token):
            return [cur.value]
        t = by_ctor[cur.ctor]
        out: list[str] = []
        for piece in t.nl.split():
            if piece.startswith("{") and piece.endswith("}"):
                kids = cur.children(piece[1:-1])
                if not kids:
                    out.extend(t.empty.get(piece[1:-1], "").split())
                for i, kid in enumerate(kids):
                    if i:
                        out.append(t.joiner)
                    out.extend(words(kid))
            else:
                out.append(piece)
        return out

    return words(root)


def add_noise(tokens: Sequence[str], rng: random.Random, rate: float) -> list[str]:
    return [rng.choice(SYNONYMS[w]) if w in SYNONYMS and rng.random() < rate else w for w in tokens]


def sample_tree(grammar: Grammar, rng: random.Random, max_depth: int,
                tokens: Mapping[str, Sequence[str]] | None = None) -> AstNode:
    """Sample a tree top-down; composite constructors that recurse are avoided at the depth limit."""
    tokens = tokens or {"identifier": VARIABLE_NAMES}

    def recursive(ctor) -> bool:
        return any(not grammar.is_primitive(f.type) and f.type == ctor.type for f in ctor.fields)

    def draw(type_name: str, depth: int, parent: str | None) -> AstNode:
        if grammar.is_primitive(type_name):
            return Token(rng.choice(tokens[type_name]))
        options = list(grammar.constructors_of(type_name))
        if parent == "And":
            # nested conjunctions are indistinguishable in the NL rendering
            options = [c for c in options if c.name != "And"] or options
        if depth >= max_depth:
            options = [c for c in options if not recursive(c)] or options
            if depth > max_depth + 2:
                raise CorpusError("depth limit unsatisfiable for this grammar")
        ctor = rng.choice(options)
        fields = []
        for f in ctor.fields:
            if f.cardinality is Cardinality.SINGLE:
                n = 1
            elif f.cardinality is Cardinality.OPTIONAL:
                n = rng.randint(0, 1)
            else:
                n = rng.randint(2, 3)
            fields.append((f.name, tuple(draw(f.type, depth + 1, ctor.name) for _ in range(n))))
        return Node(ctor.name, tuple(fields))

    return draw(grammar.root_type, 1, None)


@dataclass(frozen=True)
class Example:
    nl: tuple[str, ...]
    code: str
    actions: tuple[ActionStep, ...]
    split: str = "train"

    def to_json(self) -> dict:
        return {"nl": list(self.nl), "code": self.code, "split": self.split}


@dataclass
class Dataset:
    examples: list[Example]

    def split(self, name: str) -> list[Example]:
        return [e for e in self.examples if e.split == name]

    def __len__(self) -> int:
        return len(self.examples)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for e in self.examples:
            h.update(json.dumps(e.to_json(), sort_keys=True).encode())
        return h.hexdigest()[:16]


def make_example(grammar: Grammar, nl: Iterable[str], code: str, split: str = "train",
                 traversal: str = "preorder", heads: Mapping[str, str] | None = None) -> Example:
    tree = code_to_ast(grammar, code, heads)
    return Example(tuple(nl), ast_to_code(tree, heads), tuple(ast_to_actions(grammar, tree, traversal)), split)


def _split_sizes(n: int, split: Sequence[float] | Sequence[int]) -> tuple[int, int, int]:
    if all(isinstance(s, int) for s in split) and sum(split) == n:
        return tuple(split)  # type: ignore[return-value]
    n_train = round(n * split[0])
    n_dev = round(n * split[1])
    return n_train, n_dev, n - n_train - n_dev


def generate_corpus(grammar: Grammar | None = None, templates: Sequence[Template] = TOY_TEMPLATES,
                    n: int = 100, max_depth: int = 3, seed: int = 0, *,
                    split: Sequence[float] | Sequence[int] = (0.8, 0.1, 0.1), noise: float = 0.0,
                    traversal: str = "preorder") -> Dataset:
    """Sample ``n`` distinct NL/code pairs; the result is a pure function of the arguments."""
    grammar = grammar or toy_grammar()
    if n < 1 or max_depth < 1:
        raise CorpusError("need n >= 1 and max_depth >= 1")
    check_templates(grammar, templates)
    heads = {t.ctor: t.head for t in templates}
    rng = random.Random(seed)
    token_pool = {p: (VARIABLE_NAMES if p == "identifier" else ("x", "y", "z")) for p in grammar.primitive_types}
    const_ok = "Const" in grammar.constructors

    seen: set[str] = set()
    pairs: list[tuple[list[str], str, AstNode]] = []
    attempts = 0
    while len(pairs) < n:
        attempts += 1
        if attempts > 200 * n + 1000:
            raise CorpusError(f"could only find {len(pairs)} distinct examples of {n}")
        tree = sample_tree(grammar, rng, max_depth, token_pool)
        if const_ok:
            tree = _constants(tree, rng)
        code = ast_to_code(tree, heads)
        if code in seen:
            continue
        seen.add(code)
        nl = render_nl(tree, templates)
        if noise:
            nl = add_noise(nl, rng, noise)
        pairs.append((nl, code, tree))

    n_train, n_dev, _ = _split_sizes(n, split)
    examples = []
    for i, (nl, code, tree) in enumerate(pairs):
        name = "train" if i < n_train else "dev" if i < n_train + n_dev else "test"
        examples.append(Example(tuple(nl), code, tuple(ast_to_actions(grammar, tree, traversal)), name))
    return Dataset(examples)


def _constants(tree: AstNode, rng: random.Random) -> AstNode:
    """Give Const leaves constant names instead of variable names."""
    if isinstance(tree, Token):
        return tree
    if tree.ctor == "Const":
        return Node("Const", (("name", (Token(rng.choice(CONSTANT_NAMES)),)),))
    return Node(tree.ctor, tuple((n, tuple(_constants(k, rng) for k in kids)) for n, kids in tree.fields))


def validate_example(grammar: Grammar, ex: Example, traversal: str = "preorder",
                     heads: Mapping[str, str] | None = None) -> None:
    """Round trip and teacher-forcing soundness; raises on the first failure."""
    tree = code_to_ast(grammar, ex.code, heads)
    steps = ast_to_actions(grammar, tree, traversal)
    if tuple(steps) != ex.actions:
        raise CorpusError(f"stored actions disagree with code for {ex.code!r}")
    if ast_to_code(actions_to_ast(grammar, [s.action for s in steps], traversal), heads) != ex.code:
        raise CorpusError(f"round trip failed for {ex.code!r}")
    state = FrontierState(grammar, traversal)
    for s in steps:
        if not action_is_allowed(s.action, state.valid()):
            raise CorpusError(f"gold action {s.action} not valid at step {s.t} of {ex.code!r}")
        state.apply(s.action)


@dataclass(frozen=True)
class DatasetStats:
    count: int
    avg_nl: float
    avg_code: float
    avg_actions: float
    avg_nodes: float


def dataset_stats(examples: Sequence[Example], grammar: Grammar | None = None) -> DatasetStats:
    if not examples:
        raise CorpusError("empty dataset")
    grammar = grammar or toy_grammar()
    n = len(examples)
    return DatasetStats(
        count=n,
        avg_nl=sum(len(e.nl) for e in examples) / n,
        avg_code=sum(len(e.code.split()) for e in examples) / n,
        avg_actions=sum(len(e.actions) for e in examples) / n,
        avg_nodes=sum(tree_size(code_to_ast(grammar, e.code)) for e in examples) / n,
    )


def write_jsonl(dataset: Dataset | Sequence[Example], path) -> None:
    examples = dataset.examples if isinstance(dataset, Dataset) else dataset
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(json.dumps(e.to_json()) + "\n")


def read_jsonl(path, grammar: Grammar | None = None, traversal: str = "preorder") -> Dataset:
    grammar = grammar or toy_grammar()
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(make_example(grammar, obj["nl"], obj["code"], obj.get("split", "train"), traversal))
    return Dataset(out)
