"""Condition-labeled call graph over the fact database.

Nodes are methods (fully qualified names); every call site becomes an
edge carrying its location, receiver variable and the control-structure
branches it depends on. Labels are kept in disjunctive normal form: a set
of conjuncts, each a set of ``(cond_id, branch)`` pairs.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .facts import AstNode, FactDb, SourceLoc, natural_key, qualified_id


class CallGraphError(ValueError):
    pass


# --------------------------------------------------------------------------
# Conditions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    cond_id: str
    branch: int

    def sort_key(self):
        return (natural_key(self.cond_id), self.branch)

    def __lt__(self, other: "Condition"):
        return self.sort_key() < other.sort_key()

    def __str__(self) -> str:
        return f"({self.cond_id},{self.branch})"


def _consistent(conj: Iterable[Condition]) -> bool:
    seen: dict[str, int] = {}
    for c in conj:
        if seen.setdefault(c.cond_id, c.branch) != c.branch:
            return False
    return True


def conflicts(a: Iterable[Condition], b: Iterable[Condition]) -> bool:
    """True if the two conjuncts pick different branches of some condition."""
    branches = {c.cond_id: c.branch for c in a}
    return any(branches.get(c.cond_id, c.branch) != c.branch for c in b)


class CondLabel:
    """DNF over conditions. No conjuncts means unconditional."""

    __slots__ = ("dnf",)

    def __init__(self, conjuncts: Iterable[Iterable[Condition]] = ()):
        given = [frozenset(c) for c in conjuncts]
        kept = [c for c in given if _consistent(c)]
        if given and not kept:
            raise ValueError("label has no satisfiable conjunct")
        if any(not c for c in kept):
            self.dnf = frozenset()
            return
        # absorption: drop conjuncts implied by a smaller one
        minimal = [c for c in kept if not any(o < c for o in kept)]
        self.dnf = frozenset(minimal)

    @classmethod
    def of(cls, *conds: Condition) -> "CondLabel":
        return cls([conds]) if conds else UNCONDITIONAL

    @property
    def unconditional(self) -> bool:
        return not self.dnf

    @property
    def conjuncts(self) -> tuple[frozenset, ...]:
        """Sorted conjuncts; the unconditional label has the single empty one."""
        if not self.dnf:
            return (frozenset(),)
        return tuple(sorted(self.dnf, key=lambda c: sorted(x.sort_key() for x in c)))

    def conj(self, other: "CondLabel") -> "CondLabel | None":
        """Conjunction, or None when no combined conjunct is consistent."""
        if self.unconditional:
            return other
        if other.unconditional:
            return self
        combos = [a | b for a in self.dnf for b in other.dnf if _consistent(a | b)]
        if not combos:
            return None
        return CondLabel(combos)

    def holds(self, chosen) -> bool:
        """True if some conjunct is contained in ``chosen``."""
        if not self.dnf:
            return True
        chosen = chosen if isinstance(chosen, (set, frozenset)) else set(chosen)
        return any(c <= chosen for c in self.dnf)

    def conditions(self) -> set[Condition]:
        return set().union(*self.dnf) if self.dnf else set()

    def cond_ids(self) -> set[str]:
        return {c.cond_id for c in self.conditions()}

    def __eq__(self, other) -> bool:
        return isinstance(other, CondLabel) and self.dnf == other.dnf

    def __hash__(self) -> int:
        return hash(self.dnf)

    def __repr__(self) -> str:
        return f"CondLabel({self})"

    def __str__(self) -> str:
        if not self.dnf:
            return "{}"
        return " | ".join("{" + ",".join(str(c) for c in sorted(conj)) + "}" for conj in self.conjuncts)

    def to_json(self) -> list:
        if not self.dnf:
            return []
        return [[[c.cond_id, c.branch] for c in sorted(conj)] for conj in self.conjuncts]

    @classmethod
    def from_json(cls, data) -> "CondLabel":
        return cls([[Condition(str(i), int(b)) for i, b in conj] for conj in data])


UNCONDITIONAL = CondLabel()


# --------------------------------------------------------------------------
# Graph types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CgMethod:
    name: str
    decl_id: tuple[str, str]
    external: bool = False


@dataclass(frozen=True)
class CgEdge:
    caller: CgMethod
    callee: CgMethod
    loc: SourceLoc
    var: str
    cond: CondLabel
    call_id: str = ""
    callee_decl: tuple[str, str] | None = None

    @property
    def external(self) -> bool:
        return self.callee.external

    def __str__(self) -> str:
        return f"{self.caller.name}->{self.callee.name}@{self.loc.short()}"


@dataclass(frozen=True)
class ReturnPoint:
    method: str
    loc: SourceLoc
    cond: CondLabel
    ret_id: str


@dataclass(frozen=True)
class ConditionInfo:
    kind: str
    loc: SourceLoc | None


@dataclass
class CallGraph:
    methods: dict[str, CgMethod]
    edges: tuple[CgEdge, ...]
    returns: dict[str, tuple[ReturnPoint, ...]] = field(default_factory=dict)
    conditions: dict[str, ConditionInfo] = field(default_factory=dict)
    decl_names: dict[tuple[str, str], str] = field(default_factory=dict)

    def __post_init__(self):
        self.edges = tuple(sorted(self.edges, key=_edge_key))
        self._out: dict[str, list[CgEdge]] = {}
        self._in: dict[str, list[CgEdge]] = {}
        for e in self.edges:
            self._out.setdefault(e.caller.name, []).append(e)
            self._in.setdefault(e.callee.name, []).append(e)

    def out_edges(self, method: str) -> list[CgEdge]:
        return self._out.get(method, [])

    def in_edges(self, method: str) -> list[CgEdge]:
        return self._in.get(method, [])

    def with_edges(self, edges: Iterable[CgEdge]) -> "CallGraph":
        return CallGraph(dict(self.methods), tuple(edges), self.returns, self.conditions, self.decl_names)

    def defined_methods(self) -> list[CgMethod]:
        return [m for m in self.methods.values() if not m.external]


def _edge_key(e: CgEdge):
    return (e.caller.name, e.loc.start, e.loc.file, e.callee.name)


# --------------------------------------------------------------------------
# Detection rules
# --------------------------------------------------------------------------

_SCOPE_TYPES = ("CXXRecordDecl", "NamespaceDecl")


def _scope_names(db: FactDb, node: AstNode) -> list[str] | None:
    names = []
    found_class = False
    for anc in db.ancestors(node):
        if anc.node_type in _SCOPE_TYPES and anc.params:
            if anc.node_type == "CXXRecordDecl":
                found_class = True
                names.append(anc.params[1] if len(anc.params) > 1 else anc.params[0])
            else:
                names.append(anc.params[0])
    return list(reversed(names)) if found_class else None


def method_full_name(db: FactDb, decl: AstNode) -> str:
    """Qualified name of a CXXMethodDecl, following ``prev:`` links for
    out-of-class definitions."""
    seen = set()
    node = decl
    while True:
        scope = _scope_names(db, node)
        if scope is not None:
            return "::".join(scope + [decl.params[0]])
        prev = node.ref("prev:")
        if prev is None or prev in seen:
            break
        seen.add(prev)
        node = db.get(node.file, prev)
    loc = db.location(decl)
    raise CallGraphError(f"method {decl.params[0]!r} at {loc} has no enclosing class")


def _is_definition(db: FactDb, decl: AstNode) -> bool:
    return any(c.node_type == "CompoundStmt" for c in db.children(decl))


def detect_method_decls(db: FactDb) -> set[CgMethod]:
    """One CgMethod per method definition."""
    out = {}
    for n in db.by_type("CXXMethodDecl"):
        if not _is_definition(db, n):
            continue
        name = method_full_name(db, n)
        if name in out:
            other = out[name].decl_id
            raise CallGraphError(f"{name} defined twice ({other[0]}:{other[1]} and {n.file}:{n.id})")
        out[name] = CgMethod(name, n.key)
    return set(out.values())


def _direct_conditions(db: FactDb, node: AstNode) -> list[tuple[AstNode, int]]:
    """(subtree root, branch) pairs that ``node`` executes conditionally."""
    kids = db.children(node)
    t = node.node_type
    if t == "IfStmt":
        if "has_else" in node.params and len(kids) >= 3:
            return [(kids[-2], 0), (kids[-1], 1)]
        if len(kids) >= 2:
            return [(kids[-1], 0)]
    elif t == "WhileStmt" and len(kids) >= 2:
        return [(kids[-1], 0)]
    elif t == "ForStmt" and kids:
        out = [(kids[-1], 0)]
        if "has_inc" in node.params and len(kids) >= 2:
            out.append((kids[-2], 0))
        return out
    elif t == "ConditionalOperator" and len(kids) >= 3:
        return [(kids[-2], 0), (kids[-1], 1)]
    elif t == "BinaryOperator" and node.params and node.params[-1] in ("||", "&&") and len(kids) >= 2:
        return [(kids[-1], 0)]
    return []


_KIND = {
    "IfStmt": "if",
    "WhileStmt": "while",
    "ForStmt": "for",
    "DoStmt": "do",
    "ConditionalOperator": "?:",
    "ReturnStmt": "return",
}


def _kind(node: AstNode) -> str:
    if node.node_type == "BinaryOperator":
        return node.params[-1]
    return _KIND.get(node.node_type, node.node_type)


def detect_conditions(db: FactDb) -> dict[tuple[str, str], CondLabel]:
    """Conditionally executed subtree roots mapped to their label.

    Labels of nested structures include the enclosing ones up to the
    method boundary.
    """
    direct: dict[tuple[str, str], Condition] = {}
    for t in ("IfStmt", "WhileStmt", "ForStmt", "ConditionalOperator", "BinaryOperator"):
        for n in db.by_type(t):
            cid = qualified_id(n.file, n.id)
            for root, branch in _direct_conditions(db, n):
                direct[root.key] = Condition(cid, branch)
    out = {}
    for key in direct:
        node = db.get(*key)
        conds = [direct[key]]
        for anc in db.ancestors(node):
            if anc.node_type == "CXXMethodDecl":
                break
            if anc.key in direct:
                conds.append(direct[anc.key])
        out[key] = CondLabel.of(*conds)
    return out


def _label_of(db: FactDb, node: AstNode, conditions: dict) -> CondLabel:
    for n in itertools.chain((node,), db.ancestors(node)):
        if n.key in conditions:
            return conditions[n.key]
        if n.node_type == "CXXMethodDecl":
            break
    return UNCONDITIONAL


def _enclosing_method(db: FactDb, node: AstNode) -> AstNode | None:
    for anc in db.ancestors(node):
        if anc.node_type == "CXXMethodDecl":
            return anc
    return None


def _receiver(db: FactDb, member: AstNode) -> str:
    kids = db.children(member)
    if not kids:
        return "this"
    r = kids[0]
    while r.node_type in ("ParenExpr", "ImplicitCastExpr") and db.children(r):
        r = db.children(r)[0]
    if r.node_type == "CXXThisExpr":
        return "this"
    if r.node_type in ("DeclRefExpr", "MemberExpr") and r.params:
        return r.params[-2] if len(r.params) >= 2 else r.params[0]
    return r.node_type


def build_cg(db: FactDb) -> CallGraph:
    methods = {m.name: m for m in detect_method_decls(db)}
    decl_names: dict[tuple[str, str], str] = {}
    for n in db.by_type("CXXMethodDecl"):
        try:
            decl_names[n.key] = method_full_name(db, n)
        except CallGraphError:
            if _is_definition(db, n):
                raise
    conditions = detect_conditions(db)
    cond_info: dict[str, ConditionInfo] = {}
    for t in ("IfStmt", "WhileStmt", "ForStmt", "ConditionalOperator", "BinaryOperator"):
        for n in db.by_type(t):
            if _direct_conditions(db, n):
                cond_info[qualified_id(n.file, n.id)] = ConditionInfo(_kind(n), db.location(n))

    edges = []
    for call in db.by_type("CXXMemberCallExpr"):
        member = next((c for c in db.children(call) if c.node_type == "MemberExpr"), None)
        if member is None or len(member.params) < 2:
            continue
        caller_decl = _enclosing_method(db, call)
        if caller_decl is None:
            continue
        caller = methods[method_full_name(db, caller_decl)]
        callee_decl = db.get(member.file, member.params[-1])
        if callee_decl.node_type != "CXXMethodDecl":
            raise CallGraphError(f"call {call.id!r} resolves to {callee_decl.node_type}, not a method")
        callee_name = decl_names[callee_decl.key]
        callee = methods.get(callee_name)
        if callee is None:
            callee = methods.setdefault(callee_name, CgMethod(callee_name, callee_decl.key, external=True))
        loc = db.location(call)
        if loc is None:
            raise CallGraphError(f"call {call.id!r} has no source location")
        edges.append(
            CgEdge(
                caller, callee, loc, _receiver(db, member), _label_of(db, call, conditions),
                qualified_id(call.file, call.id), callee_decl.key,
            )
        )

    returns: dict[str, list[ReturnPoint]] = {}
    for ret in db.by_type("ReturnStmt"):
        decl = _enclosing_method(db, ret)
        loc = db.location(ret)
        if decl is None or loc is None:
            continue
        rid = qualified_id(ret.file, ret.id)
        name = method_full_name(db, decl)
        returns.setdefault(name, []).append(ReturnPoint(name, loc, _label_of(db, ret, conditions), rid))
        cond_info[rid] = ConditionInfo("return", loc)
    return CallGraph(
        methods,
        tuple(edges),
        {k: tuple(sorted(v, key=lambda r: r.loc.start)) for k, v in returns.items()},
        cond_info,
        decl_names,
    )


def cg_variants(cg: CallGraph, overrides) -> Iterator[CallGraph]:
    """The base graph, then every redirection of virtual call edges to
    overriding methods (Cartesian product, lazily)."""
    yield cg
    choices = []
    for i, e in enumerate(cg.edges):
        targets = sorted(overrides.get(e.callee_decl, ()) if e.callee_decl else ())
        if not targets:
            continue
        opts = [e.callee]
        for key in sorted(targets, key=lambda k: cg.decl_names.get(k, k[1])):
            name = cg.decl_names.get(key)
            if name is None:
                continue
            opts.append(cg.methods.get(name) or CgMethod(name, key, external=True))
        if len(opts) > 1:
            choices.append((i, opts))
    if not choices:
        return
    first = True
    for combo in itertools.product(*(opts for _, opts in choices)):
        if first:
            first = False
            continue
        edges = list(cg.edges)
        methods = dict(cg.methods)
        for (i, _), callee in zip(choices, combo):
            edges[i] = replace(edges[i], callee=callee)
            methods.setdefault(callee.name, callee)
        yield CallGraph(methods, tuple(edges), cg.returns, cg.conditions, cg.decl_names)


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def cg_to_dot(cg: CallGraph, name: str = "cg") -> str:
    lines = [f"digraph {name} {{"]
    for m in sorted(cg.methods.values(), key=lambda m: m.name):
        style = ' style="dashed"' if m.external else ""
        lines.append(f'  "{dot_escape(m.name)}" [label="{dot_escape(m.name)}"{style}];')
    for e in cg.edges:
        label = f"{e.loc.short()}\n{e.var}\n{e.cond}"
        lines.append(f'  "{dot_escape(e.caller.name)}" -> "{dot_escape(e.callee.name)}" [label="{dot_escape(label)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def loc_to_json(loc: SourceLoc | None):
    if loc is None:
        return None
    return {"file": loc.file, "line": loc.line, "column": loc.column}


def edge_to_json(e: CgEdge) -> dict:
    return {
        "caller": e.caller.name,
        "callee": e.callee.name,
        "loc": loc_to_json(e.loc),
        "var": e.var,
        "cond": e.cond.to_json(),
        "external": e.external,
        "call_id": e.call_id,
    }


def cg_to_json(cg: CallGraph) -> str:
    data = {
        "methods": [
            {"name": m.name, "decl": {"file": m.decl_id[0], "id": m.decl_id[1]}, "external": m.external}
            for m in sorted(cg.methods.values(), key=lambda m: m.name)
        ],
        "edges": [edge_to_json(e) for e in cg.edges],
    }
    return json.dumps(data, indent=2) + "\n"
