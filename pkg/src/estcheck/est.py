"""Execution sequence trees.

A tree is unfolded from one seed call edge. The root stands for the seed
call inside its caller; following nodes are the calls executed after it,
in program order. Calls made inside a callee come before the next call of
the caller (the tree is a sequence, not an invocation hierarchy). When the
seed caller's body is exhausted, the flow returns to each method that may
have invoked it; every such caller opens a separate branch.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Iterator

from .callgraph import CallGraph, CgEdge, CondLabel, Condition, UNCONDITIONAL, conflicts, dot_escape, loc_to_json
from .facts import SourceLoc

DEFAULT_BUDGET = 100_000

# An edge may occur on a root-to-leaf path at most this often: its first
# run plus one repetition (e.g. the unwinding of a recursion).
MAX_EDGE_OCCURRENCES = 2

KIND_LETTER = {"root": "r", "child": "c", "parent": "p"}


class EstError(ValueError):
    pass


class EstBudgetExceeded(EstError):
    def __init__(self, budget: int):
        super().__init__(f"tree exceeds the node budget of {budget}")
        self.budget = budget


@dataclass(eq=False)
class EstNode:
    id: tuple[str, ...]
    loc: SourceLoc
    var: str
    kind: str
    cond: CondLabel = UNCONDITIONAL
    edge: CgEdge | None = None

    @property
    def name(self) -> str:
        return self.id[0]

    def __repr__(self) -> str:
        return f"EstNode({self.name}@{self.loc.short()} {self.kind} {self.cond})"


class Est:
    """Finite ordered tree of EstNodes."""

    def __init__(self, root: EstNode, children: dict[EstNode, list[EstNode]] | None = None):
        self.root = root
        self.children = children if children is not None else {}

    def successors(self, node: EstNode) -> list[EstNode]:
        return self.children.get(node, [])

    def nodes(self) -> list[EstNode]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(self.successors(n)))
        return out

    def __len__(self) -> int:
        return len(self.nodes())

    def parent_map(self) -> dict[EstNode, EstNode]:
        return {c: p for p, cs in self.children.items() for c in cs}

    def cond_ids(self) -> set[str]:
        ids: set[str] = set()
        for n in self.nodes():
            ids |= n.cond.cond_ids()
        return ids


def restrict(label: CondLabel, facts: frozenset[Condition]) -> CondLabel | None:
    """Simplify ``label`` under conditions known to hold; None if it cannot hold."""
    if label.unconditional or not facts:
        return label
    kept = [k - facts for k in label.dnf if not conflicts(k, facts)]
    if not kept:
        return None
    return CondLabel(kept)


def _edge_key(e: CgEdge):
    return (e.call_id, e.callee.name)


class _Builder:
    def __init__(self, cg: CallGraph, facts: frozenset, budget: int):
        self.cg = cg
        self.facts = facts
        self.budget = budget
        self.children: dict[EstNode, list[EstNode]] = {}
        self.count = 1

    def attach(self, parent: EstNode, node: EstNode) -> None:
        self.count += 1
        if self.count > self.budget:
            raise EstBudgetExceeded(self.budget)
        self.children.setdefault(parent, []).append(node)

    def gate(self, method: str, after: tuple | None, edge: CgEdge) -> CondLabel | None:
        """Label of ``edge`` given the return statements that may precede it.

        A conjunct under which some return certainly runs first is dropped.
        A return that may or may not run adds the synthetic condition
        (return id, 0), read as "this return is skipped".
        """
        label = edge.cond
        start = edge.loc.start
        rets = [
            r for r in self.cg.returns.get(method, ())
            if r.loc.file == edge.loc.file
            and r.loc.end < start
            and (after is None or r.loc.end > after)
        ]
        conjuncts = list(label.conjuncts)
        for r in rets:
            rconj = r.cond.conjuncts
            nxt = []
            for k in conjuncts:
                if any(rc <= k for rc in rconj):
                    continue
                if all(conflicts(rc, k) for rc in rconj):
                    nxt.append(k)
                else:
                    nxt.append(k | {Condition(r.ret_id, 0)})
            conjuncts = nxt
            if not conjuncts:
                return None
        out = CondLabel(conjuncts) if conjuncts != [frozenset()] else UNCONDITIONAL
        return restrict(out, self.facts)

    def run_body(
        self, tail: EstNode, method: str, after: tuple | None, ctx: CondLabel, stack: tuple, seen: Counter
    ) -> EstNode:
        """Append the calls of ``method`` after position ``after``; returns the new tail.

        ``seen`` counts edge occurrences on the current path and is updated in place.
        """
        for e in self.cg.out_edges(method):
            if after is not None and e.loc.start <= after:
                continue
            key = _edge_key(e)
            if key in stack or seen[key] >= MAX_EDGE_OCCURRENCES:
                continue
            label = self.gate(method, after, e)
            if label is None:
                continue
            eff = label.conj(ctx)
            if eff is None:
                continue
            node = EstNode((e.callee.name,) + tail.id, e.loc, e.var, "child", eff, e)
            self.attach(tail, node)
            seen[key] += 1
            tail = node
            if not e.external:
                tail = self.run_body(tail, e.callee.name, None, eff, stack + (key,), seen)
        return tail

    def run_parents(self, tail: EstNode, method: str, ctx: CondLabel, used: frozenset, seen: Counter) -> None:
        for pe in self.cg.in_edges(method):
            key = _edge_key(pe)
            if key in used or seen[key] >= MAX_EDGE_OCCURRENCES:
                continue
            label = self.gate(pe.caller.name, None, pe)
            if label is None:
                continue
            lab = label.conj(ctx)
            if lab is None:
                continue
            node = EstNode((pe.caller.name,) + tail.id, pe.loc, pe.var, "parent", lab, pe)
            self.attach(tail, node)
            branch = seen.copy()
            branch[key] += 1
            end = self.run_body(node, pe.caller.name, pe.loc.start, lab, (), branch)
            self.run_parents(end, pe.caller.name, lab, used | {key}, branch)


def seed_facts(seed: CgEdge) -> frozenset[Condition]:
    """Conditions shared by every conjunct of the seed's label: they hold
    whenever the seed call runs."""
    if seed.cond.unconditional:
        return frozenset()
    return frozenset.intersection(*seed.cond.dnf)


def build_est(cg: CallGraph, seed: CgEdge, budget: int = DEFAULT_BUDGET) -> Est:
    if seed not in cg.edges:
        raise EstError(f"seed {seed} is not an edge of the call graph")
    b = _Builder(cg, seed_facts(seed), budget)
    root = EstNode((seed.caller.name,), seed.loc, seed.var, "root", seed.cond, seed)
    tail = root
    seen = Counter({_edge_key(seed): 1})
    if not seed.external:
        tail = b.run_body(tail, seed.callee.name, None, UNCONDITIONAL, (_edge_key(seed),), seen)
    tail = b.run_body(tail, seed.caller.name, seed.loc.start, UNCONDITIONAL, (), seen)
    b.run_parents(tail, seed.caller.name, UNCONDITIONAL, frozenset(), seen)
    return Est(root, b.children)


def est_paths(tree) -> Iterator[list]:
    """Root-to-leaf paths, depth first, left to right."""
    stack = [(tree.root, [tree.root])]
    while stack:
        node, path = stack.pop()
        succ = tree.successors(node)
        if not succ:
            yield path
            continue
        for s in reversed(succ):
            stack.append((s, path + [s]))


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def node_label(n: EstNode) -> str:
    return f"{n.name}\n{n.loc.short()}\n{n.var}\n{KIND_LETTER[n.kind]}\n{n.cond}"


def tree_to_dot(tree, name: str = "est") -> str:
    nodes = tree.nodes()
    index = {n: i for i, n in enumerate(nodes)}
    lines = [f"digraph {name} {{", "  node [shape=box];"]
    for n in nodes:
        lines.append(f'  n{index[n]} [label="{dot_escape(node_label(n))}"];')
    for n in nodes:
        for c in tree.successors(n):
            lines.append(f"  n{index[n]} -> n{index[c]};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def node_to_json(n: EstNode) -> dict:
    return {
        "id": list(n.id),
        "name": n.name,
        "loc": loc_to_json(n.loc),
        "var": n.var,
        "kind": n.kind,
        "cond": n.cond.to_json(),
    }


def tree_to_obj(tree, node=None) -> dict:
    node = node or tree.root
    obj = node_to_json(node)
    obj["children"] = [tree_to_obj(tree, c) for c in tree.successors(node)]
    return obj


def tree_to_json(tree) -> str:
    return json.dumps(tree_to_obj(tree), indent=2) + "\n"


def tree_to_text(tree) -> str:
    lines = []

    def walk(n, depth):
        cond = "" if n.cond.unconditional else f" {n.cond}"
        lines.append(f"{'  ' * depth}[{KIND_LETTER[n.kind]}] {n.name} @{n.loc} var={n.var}{cond}")
        for c in tree.successors(n):
            walk(c, depth + 1)

    walk(tree.root, 0)
    return "\n".join(lines) + "\n"
