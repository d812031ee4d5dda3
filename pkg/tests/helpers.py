"""Shared builders for hand-made and random trees and formulas."""

from __future__ import annotations

import random
from pathlib import Path

from estcheck.callgraph import CondLabel, Condition, UNCONDITIONAL
from estcheck.ctl import And, Atom, Const, Not, Or, RootRef, Temporal, Until
from estcheck.est import Est, EstNode
from estcheck.facts import SourceLoc

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def label(*conjuncts) -> CondLabel:
    """label([("2", 0)], [("4", 0)]) -> {(2,0)} | {(4,0)}"""
    if not conjuncts:
        return UNCONDITIONAL
    return CondLabel([[Condition(str(i), b) for i, b in conj] for conj in conjuncts])


def T(name, *children, cond=UNCONDITIONAL, var="x"):
    return (name, children, cond, var)


def build_tree(spec) -> Est:
    """Est from nested ``T(...)`` tuples; ids follow the tree path."""
    counter = [0]
    children: dict = {}

    def make(sp, parent_id, kind):
        name, kids, cond, var = sp
        counter[0] += 1
        node = EstNode((name,) + parent_id, SourceLoc("t.cpp", counter[0], 1), var, kind, cond)
        for k in kids:
            children.setdefault(node, []).append(make(k, node.id, "child"))
        return node

    root = make(spec, (), "root")
    return Est(root, children)


def by_name(tree) -> dict:
    return {n.name: n for n in tree.nodes()}


def names(nodes) -> set[str]:
    return {n.name for n in nodes}


NAMES = ["a", "b", "c", "d"]
VARS = ["v", "w"]


def random_label(rng: random.Random, cond_ids: int = 4) -> CondLabel:
    if rng.random() < 0.45:
        return UNCONDITIONAL
    conjuncts = []
    for _ in range(rng.randint(1, 2)):
        ids = rng.sample(range(1, cond_ids + 1), rng.randint(1, 2))
        conjuncts.append([(str(i), rng.randint(0, 1)) for i in ids])
    return label(*conjuncts)


def random_tree(rng: random.Random, max_nodes: int = 30, labels: bool = True) -> Est:
    size = rng.randint(1, max_nodes)
    specs = []
    for i in range(size):
        cond = random_label(rng) if labels and i else UNCONDITIONAL
        specs.append([rng.choice(NAMES), [], cond, rng.choice(VARS)])
    for i in range(1, size):
        specs[rng.randrange(i)][1].append(i)

    def nest(i):
        name, kids, cond, var = specs[i]
        return T(name, *(nest(k) for k in kids), cond=cond, var=var)

    return build_tree(nest(0))


def random_atom(rng: random.Random):
    lhs = rng.choice(["name", "var"])
    op = rng.choice(["==", "!="])
    if rng.random() < 0.3:
        rhs = RootRef(lhs)
    else:
        rhs = rng.choice(NAMES if lhs == "name" else VARS)
    return Atom(lhs, op, rhs)


def random_formula(rng: random.Random, depth: int = 4):
    if depth == 0 or rng.random() < 0.25:
        return Const(rng.random() < 0.5) if rng.random() < 0.1 else random_atom(rng)
    kind = rng.randrange(6)
    sub = lambda: random_formula(rng, depth - 1)  # noqa: E731
    if kind == 0:
        return Not(sub())
    if kind == 1:
        return And(sub(), sub())
    if kind == 2:
        return Or(sub(), sub())
    if kind == 3:
        return Until(rng.choice("AE"), sub(), sub())
    return Temporal(rng.choice(["AX", "EX", "AF", "EF", "AG", "EG"]), sub())


def brute_kept(tree, chosen) -> set:
    """Nodes whose label is empty or has a conjunct inside ``chosen``; the root always."""
    chosen = set(chosen)
    out = {tree.root}
    for n in tree.nodes():
        if not n.cond.dnf or any(c <= chosen for c in n.cond.dnf):
            out.add(n)
    return out
