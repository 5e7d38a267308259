"""The ApplyRule / Reduce / GenToken transition system.

An AST is linearized into actions either in pre-order (depth-first, each
node's ApplyRule before any of its descendants) or breadth-first (level
order: when a node is expanded, the head actions of all of its fields are
emitted at once and composite children are queued).

Every action carries ``parent_index``: the 1-based step of the ApplyRule
whose node owns the field the action fills, 0 for the very first action.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence, Union

from .asdl import Cardinality, Field, Grammar
from .ast import AstNode, Node, Token, validate_ast


class Traversal(str, Enum):
    PREORDER = "preorder"
    BREADTH_FIRST = "bfs"

    @classmethod
    def parse(cls, value: "Traversal | str") -> "Traversal":
        if isinstance(value, Traversal):
            return value
        aliases = {"preorder": cls.PREORDER, "pre-order": cls.PREORDER, "bfs": cls.BREADTH_FIRST,
                   "breadth_first": cls.BREADTH_FIRST, "breadth-first": cls.BREADTH_FIRST}
        try:
            return aliases[value]
        except KeyError:
            raise ValueError(f"unknown traversal {value!r}") from None


@dataclass(frozen=True)
class ApplyRule:
    ctor: str

    def __str__(self) -> str:
        return f"APPLY[{self.ctor}]"


@dataclass(frozen=True)
class Reduce:
    def __str__(self) -> str:
        return "REDUCE"


@dataclass(frozen=True)
class GenToken:
    # None is the "any token" template returned by valid_actions
    token: str | None

    def __str__(self) -> str:
        return f"GEN[{'*' if self.token is None else self.token}]"


Action = Union[ApplyRule, Reduce, GenToken]
REDUCE = Reduce()
ANY_TOKEN = GenToken(None)


@dataclass(frozen=True)
class ActionStep:
    t: int
    action: Action
    parent_index: int


class TransitionError(ValueError):
    pass


class IllegalAction(TransitionError):
    def __init__(self, t: int, action: Action, expected: Iterable[Action]):
        self.t, self.action = t, action
        self.expected = sorted(map(str, expected))
        super().__init__(f"illegal action {action} at step {t}; expected one of {self.expected}")


class PrematureEnd(TransitionError):
    def __init__(self, open_fields: list[str]):
        self.open_fields = open_fields
        super().__init__("action sequence ended with open fields: " + ", ".join(open_fields))


class TrailingActions(TransitionError):
    pass


def format_action(action: Action) -> str:
    return str(action)


def parse_action(text: str) -> Action:
    text = text.strip()
    if text == "REDUCE":
        return REDUCE
    for prefix, cls in (("APPLY[", ApplyRule), ("GEN[", GenToken)):
        if text.startswith(prefix) and text.endswith("]"):
            return cls(text[len(prefix):-1])
    raise ValueError(f"cannot parse action {text!r}")


def action_is_allowed(action: Action, allowed: frozenset[Action]) -> bool:
    if isinstance(action, GenToken):
        return ANY_TOKEN in allowed and action.token is not None
    return action in allowed


# --- AST -> actions ---------------------------------------------------------


def _field_actions(grammar: Grammar, f: Field, kids: Sequence[AstNode]) -> list[tuple[Action, AstNode | None]]:
    """Head actions filling one field, paired with the child they create (None for Reduce)."""
    out: list[tuple[Action, AstNode | None]] = []
    for kid in kids:
        if isinstance(kid, Token):
            out.append((GenToken(kid.value), kid))
        else:
            out.append((ApplyRule(kid.ctor), kid))
    if f.cardinality is Cardinality.MULTIPLE or (f.cardinality is Cardinality.OPTIONAL and not kids):
        out.append((REDUCE, None))
    return out


def ast_to_actions(grammar: Grammar, root: AstNode, traversal: Traversal | str = Traversal.PREORDER) -> list[ActionStep]:
    report = validate_ast(grammar, root)
    if not report:
        raise TransitionError(f"invalid AST at node {report.node_id}: {report.message}")
    traversal = Traversal.parse(traversal)
    steps: list[ActionStep] = []

    def push(action: Action, parent: int) -> int:
        steps.append(ActionStep(len(steps) + 1, action, parent))
        return len(steps)

    assert isinstance(root, Node)
    root_t = push(ApplyRule(root.ctor), 0)

    if traversal is Traversal.PREORDER:
        def expand(cur: Node, t: int) -> None:
            ctor = grammar.constructors[cur.ctor]
            for f, (_, kids) in zip(ctor.fields, cur.fields):
                for action, kid in _field_actions(grammar, f, kids):
                    kid_t = push(action, t)
                    if isinstance(kid, Node):
                        expand(kid, kid_t)

        expand(root, root_t)
    else:
        queue: deque[tuple[Node, int]] = deque([(root, root_t)])
        while queue:
            cur, t = queue.popleft()
            ctor = grammar.constructors[cur.ctor]
            for f, (_, kids) in zip(ctor.fields, cur.fields):
                for action, kid in _field_actions(grammar, f, kids):
                    kid_t = push(action, t)
                    if isinstance(kid, Node):
                        queue.append((kid, kid_t))
    return steps


# --- frontier ---------------------------------------------------------------


@dataclass(frozen=True)
class _Frame:
    ctor: str
    owner: int  # step index of the ApplyRule that opened this node
    field_pos: int = 0
    count: int = 0


class FrontierState:
    """Unfinished fields of a partial derivation.

    Frames are immutable so :meth:`copy` is a shallow list copy, which keeps
    beam search cheap.
    """

    def __init__(self, grammar: Grammar, traversal: Traversal | str = Traversal.PREORDER):
        self.grammar = grammar
        self.traversal = Traversal.parse(traversal)
        self.frames: list[_Frame] = []
        self.t = 0  # actions consumed so far
        self.started = False

    def copy(self) -> "FrontierState":
        other = FrontierState.__new__(FrontierState)
        other.grammar, other.traversal = self.grammar, self.traversal
        other.frames, other.t, other.started = list(self.frames), self.t, self.started
        return other

    @property
    def complete(self) -> bool:
        return self.started and not self.frames

    def _active_index(self) -> int:
        return -1 if self.traversal is Traversal.PREORDER else 0

    def frontier(self) -> tuple[str | None, Field, int, int]:
        """(owning constructor, field, children emitted, owner step) of the active field."""
        if not self.started:
            return None, Field("root", self.grammar.root_type), 0, 0
        if not self.frames:
            raise TransitionError("derivation is complete")
        fr = self.frames[self._active_index()]
        f = self.grammar.constructors[fr.ctor].fields[fr.field_pos]
        return fr.ctor, f, fr.count, fr.owner

    @property
    def parent_index(self) -> int:
        return self.frontier()[3]

    def open_fields(self) -> list[str]:
        out = []
        for fr in self.frames:
            ctor = self.grammar.constructors[fr.ctor]
            out.extend(f"{fr.ctor}.{f.name}@{fr.owner}" for f in ctor.fields[fr.field_pos:])
        return out

    def valid(self) -> frozenset[Action]:
        _, f, count, _ = self.frontier()
        allowed: set[Action] = set()
        if self.grammar.is_primitive(f.type):
            allowed.add(ANY_TOKEN)
        else:
            allowed.update(ApplyRule(c.name) for c in self.grammar.constructors_of(f.type))
        if f.cardinality is not Cardinality.SINGLE:
            allowed.add(REDUCE)
        return frozenset(allowed)

    def apply(self, action: Action) -> int:
        """Consume ``action``; returns its parent step index."""
        if self.complete:
            raise TrailingActions(f"action {action} at step {self.t + 1} after the derivation completed")
        allowed = self.valid()
        if not action_is_allowed(action, allowed):
            raise IllegalAction(self.t + 1, action, allowed)
        parent = self.parent_index
        self.t += 1
        if not self.started:
            self.started = True
            self._open(action.ctor)
            return parent

        idx = self._active_index()
        fr = self.frames[idx]
        f = self.grammar.constructors[fr.ctor].fields[fr.field_pos]
        if isinstance(action, Reduce):
            fr = _Frame(fr.ctor, fr.owner, fr.field_pos + 1, 0)
        elif f.cardinality is Cardinality.MULTIPLE:
            fr = _Frame(fr.ctor, fr.owner, fr.field_pos, fr.count + 1)
        else:
            fr = _Frame(fr.ctor, fr.owner, fr.field_pos + 1, 0)
        n_fields = len(self.grammar.constructors[fr.ctor].fields)
        if fr.field_pos >= n_fields:
            del self.frames[idx]
        else:
            self.frames[idx] = fr
        if isinstance(action, ApplyRule):
            self._open(action.ctor)
        return parent

    def _open(self, ctor_name: str) -> None:
        if self.grammar.constructors[ctor_name].fields:
            self.frames.append(_Frame(ctor_name, self.t))


def valid_actions(grammar: Grammar, state: FrontierState) -> frozenset[Action]:
    if state.complete:
        raise TransitionError("derivation is complete")
    return state.valid()


# --- actions -> AST ---------------------------------------------------------


class _Open:
    __slots__ = ("ctor", "kids")

    def __init__(self, ctor: str, n_fields: int):
        self.ctor = ctor
        self.kids: list[list] = [[] for _ in range(n_fields)]

    def freeze(self, grammar: Grammar) -> Node:
        ctor = grammar.constructors[self.ctor]
        return Node(self.ctor, tuple(
            (f.name, tuple(k.freeze(grammar) if isinstance(k, _Open) else k for k in kids))
            for f, kids in zip(ctor.fields, self.kids)))


def actions_to_steps(grammar: Grammar, actions: Sequence[Action], traversal: Traversal | str = Traversal.PREORDER) -> list[ActionStep]:
    """Attach parent links to a bare action list, checking legality."""
    state = FrontierState(grammar, traversal)
    steps = []
    for a in actions:
        steps.append(ActionStep(state.t + 1, a, state.apply(a)))
    if not state.complete:
        raise PrematureEnd(state.open_fields() if state.started else [f"root:{grammar.root_type}"])
    return steps


def actions_to_ast(grammar: Grammar, actions: Sequence[Action | ActionStep], traversal: Traversal | str = Traversal.PREORDER) -> Node:
    state = FrontierState(grammar, traversal)
    opened: dict[int, _Open] = {}
    root: _Open | None = None
    for item in actions:
        a = item.action if isinstance(item, ActionStep) else item
        if not state.complete and state.started:
            owner_ctor, f, _, owner = state.frontier()
            field_pos = [fl.name for fl in grammar.constructors[owner_ctor].fields].index(f.name)
        else:
            owner, field_pos = 0, 0
        state.apply(a)
        if isinstance(a, ApplyRule):
            new = _Open(a.ctor, len(grammar.constructors[a.ctor].fields))
            opened[state.t] = new
            if owner == 0:
                root = new
            else:
                opened[owner].kids[field_pos].append(new)
        elif isinstance(a, GenToken):
            opened[owner].kids[field_pos].append(Token(a.token))
    if not state.complete:
        raise PrematureEnd(state.open_fields() if state.started else [f"root:{grammar.root_type}"])
    assert root is not None
    return root.freeze(grammar)


def steps_depths(steps: Sequence[ActionStep]) -> list[int]:
    """Tree depth of the node each action creates (root action 0)."""
    depth: list[int] = []
    for s in steps:
        depth.append(0 if s.parent_index == 0 else depth[s.parent_index - 1] + 1)
    return depth
