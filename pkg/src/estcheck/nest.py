"""Condition assignments and the tree variants they select.

An assignment fixes, for some control structures, which branch is taken.
A node survives when its label is empty or one of its conjuncts is fully
chosen; dropped nodes are spliced out and their surviving descendants move
up to the nearest surviving ancestor. The root is always kept.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Iterator

from .callgraph import Condition
from .est import Est, EstNode
from .facts import natural_key


@dataclass(frozen=True)
class Assignment:
    chosen: frozenset[Condition] = frozenset()

    def __post_init__(self):
        ids = [c.cond_id for c in self.chosen]
        if len(ids) != len(set(ids)):
            raise ValueError(f"assignment picks two branches of one condition: {self}")

    @classmethod
    def of(cls, *conds: Condition) -> "Assignment":
        return cls(frozenset(conds))

    def __iter__(self):
        return iter(sorted(self.chosen))

    def __len__(self) -> int:
        return len(self.chosen)

    def __str__(self) -> str:
        return "{" + ",".join(str(c) for c in self) + "}"

    def to_json(self) -> list:
        return [[c.cond_id, c.branch] for c in self]


_PAIR = re.compile(r"\(\s*([^,()\s]+)\s*,\s*(-?\d+)\s*\)")


def parse_assignment(text: str) -> Assignment:
    """Parse ``"(id,branch),(id,branch)"``; an empty string is the empty set."""
    text = text.strip()
    if text in ("", "{}"):
        return Assignment()
    body = text[1:-1] if text.startswith("{") and text.endswith("}") else text
    pos = 0
    conds = []
    while pos < len(body):
        m = _PAIR.match(body, pos)
        if not m:
            raise ValueError(f"bad assignment near {body[pos:]!r}; expected (id,branch)")
        conds.append(Condition(m.group(1), int(m.group(2))))
        pos = m.end()
        while pos < len(body) and body[pos] in ", ":
            pos += 1
    return Assignment(frozenset(conds))


def branch_options(tree) -> dict[str, list[int]]:
    """Branch values used per condition id in the tree's labels."""
    opts: dict[str, set[int]] = {}
    for n in tree.nodes():
        for c in n.cond.conditions():
            opts.setdefault(c.cond_id, set()).add(c.branch)
    return {k: sorted(opts[k]) for k in sorted(opts, key=natural_key)}


def assignments(tree) -> Iterator[Assignment]:
    """Every consistent choice over the tree's condition ids, lazily.

    Ids are sorted; for each id "absent" comes before its branches.
    """
    opts = branch_options(tree)
    ids = list(opts)
    for combo in itertools.product(*([None] + opts[i] for i in ids)):
        yield Assignment(frozenset(Condition(i, b) for i, b in zip(ids, combo) if b is not None))


def assignment_count(tree) -> int:
    total = 1
    for branches in branch_options(tree).values():
        total *= len(branches) + 1
    return total


def kept(node: EstNode, chosen: Iterable[Condition]) -> bool:
    return node.cond.holds(chosen)


class Nest:
    """Tree view of the nodes an assignment keeps."""

    def __init__(self, root: EstNode, children: dict, assignment: Assignment):
        self.root = root
        self.children = children
        self.assignment = assignment

    def successors(self, node: EstNode) -> list[EstNode]:
        return self.children.get(node, [])

    def nodes(self) -> list[EstNode]:
        return Est.nodes(self)

    def __len__(self) -> int:
        return len(self.nodes())

    def node_set(self) -> frozenset[EstNode]:
        return frozenset(self.nodes())


def kept_successors(tree, node: EstNode, chosen) -> list[EstNode]:
    """Nearest kept descendants of ``node``, in order."""
    out = []
    stack = list(reversed(tree.successors(node)))
    while stack:
        n = stack.pop()
        if n.cond.holds(chosen):
            out.append(n)
        else:
            stack.extend(reversed(tree.successors(n)))
    return out


def derive_nest(tree: Est, a: Assignment) -> Nest:
    chosen = a.chosen
    children: dict[EstNode, list[EstNode]] = {}
    stack = [tree.root]
    while stack:
        n = stack.pop()
        succ = kept_successors(tree, n, chosen)
        if succ:
            children[n] = succ
            stack.extend(succ)
    return Nest(tree.root, children, a)


def nest_count(tree: Est) -> int:
    """Number of distinct kept-node sets over all assignments."""
    return len({derive_nest(tree, a).node_set() for a in assignments(tree)})
