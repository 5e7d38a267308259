"""Two-dimensional (depth, horizontal) position vectors for AST nodes.

The root sits at (0, 0).  A node's depth is its parent's depth plus one.
The first child visited under a parent inherits the parent's horizontal
coordinate; every later child takes a fresh column from a running counter.
Under a pre-order sequence this makes the vectors unique and lets the parent
of any node be recovered from the vectors alone.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

from .transition import ActionStep


class NodeVector(NamedTuple):
    depth: int
    horiz: int


class VectorError(ValueError):
    pass


def vectorize_parents(parents: Sequence[int]) -> list[NodeVector]:
    """Vectors for nodes given 0-based parent indices (-1 marks the root)."""
    vectors: list[NodeVector] = []
    visited: set[int] = set()
    maxn = 0
    for t, p in enumerate(parents):
        if p < 0:
            if t != 0:
                raise VectorError(f"node {t} claims to be a second root")
            vectors.append(NodeVector(0, 0))
            continue
        if t == 0:
            raise VectorError("first node must be the root")
        if p >= t:
            raise VectorError(f"node {t} has parent {p}, which does not precede it")
        vp = vectors[p]
        if p not in visited:
            vectors.append(NodeVector(vp.depth + 1, vp.horiz))
            visited.add(p)
        else:
            maxn += 1
            vectors.append(NodeVector(vp.depth + 1, maxn))
    return vectors


def ast2vec(steps: Sequence[ActionStep]) -> list[NodeVector]:
    """Vectorize an action sequence through its parent links."""
    return vectorize_parents([s.parent_index - 1 for s in steps])


def vec2parents(vectors: Sequence[NodeVector]) -> list[int]:
    """Recover 0-based parent indices (-1 for the root) from pre-order vectors.

    The parent of node t is the nearest earlier node one level up whose
    horizontal coordinate does not exceed t's.
    """
    parents: list[int] = []
    for t, (d, h) in enumerate(vectors):
        if t == 0:
            if (d, h) != (0, 0):
                raise VectorError("first vector must be the root (0, 0)")
            parents.append(-1)
            continue
        for s in range(t - 1, -1, -1):
            ds, hs = vectors[s]
            if ds == d - 1 and hs <= h:
                parents.append(s)
                break
        else:
            raise VectorError(f"no parent candidate for node {t} at {(d, h)}")
    return parents


def displacement(a: NodeVector, b: NodeVector) -> tuple[int, int]:
    return (b[0] - a[0], b[1] - a[1])


def vec_norm(v: NodeVector | tuple[int, int]) -> float:
    return math.hypot(v[0], v[1])
