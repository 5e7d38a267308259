"""Random grammar-conforming trees for property tests."""

from __future__ import annotations

import random

from aptree.asdl import Cardinality, Grammar
from aptree.ast import Node, Token

TOKENS = ("a", "b", "c", "x1", "y2", "$0", "r0")


def _min_size(grammar: Grammar) -> dict[str, int]:
    """Smallest number of tree nodes needed to realize each constructor."""
    size = {c: None for c in grammar.constructors}
    changed = True
    while changed:
        changed = False
        for name, ctor in grammar.constructors.items():
            total = 1
            for f in ctor.fields:
                if f.cardinality is not Cardinality.SINGLE:
                    continue
                if grammar.is_primitive(f.type):
                    total += 1
                    continue
                options = [size[c.name] for c in grammar.constructors_of(f.type) if size[c.name] is not None]
                if not options:
                    total = None
                    break
                total += min(options)
            if total is not None and (size[name] is None or total < size[name]):
                size[name] = total
                changed = True
    return size


def random_tree(grammar: Grammar, rng: random.Random, max_nodes: int = 200, tokens=TOKENS) -> Node:
    """Top-down sample whose node count never exceeds ``max_nodes``."""
    min_size = _min_size(grammar)
    budget = [max_nodes]

    def cheapest(type_name):
        return min(min_size[c.name] for c in grammar.constructors_of(type_name))

    def draw(type_name: str, reserve: int):
        if grammar.is_primitive(type_name):
            budget[0] -= 1
            return Token(rng.choice(tokens))
        options = [c for c in grammar.constructors_of(type_name) if min_size[c.name] <= budget[0] - reserve]
        ctor = rng.choice(options)
        budget[0] -= 1
        fields = []
        single_cost = [0 if f.cardinality is not Cardinality.SINGLE else
                       (1 if grammar.is_primitive(f.type) else cheapest(f.type)) for f in ctor.fields]
        for k, f in enumerate(ctor.fields):
            later = sum(single_cost[k + 1:]) + reserve
            kids = []
            if f.cardinality is Cardinality.SINGLE:
                want = 1
            elif f.cardinality is Cardinality.OPTIONAL:
                want = rng.randint(0, 1)
            else:
                want = rng.choice([0, 1, 2, 3, 4])
            for _ in range(want):
                cost = 1 if grammar.is_primitive(f.type) else cheapest(f.type)
                if f.cardinality is not Cardinality.SINGLE and budget[0] - later < cost:
                    break
                kids.append(draw(f.type, later if f.cardinality is Cardinality.SINGLE else later))
            fields.append((f.name, tuple(kids)))
        return Node(ctor.name, tuple(fields))

    return draw(grammar.root_type, 0)
