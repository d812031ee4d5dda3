"""AST fact database.

Every AST node of every translation unit is stored as one uniform record::

    node(File, Ast_Order, Id, Parent_Id, Type, Src_Loc, Params).

This module reads and writes that text format, validates the merged
database and answers the structural queries the detection rules are
built on (children, descendants, ancestors, typed parameter unpacking).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

NONE = None

SUPPORTED_TYPES = frozenset(
    {
        "TranslationUnitDecl",
        "CXXRecordDecl",
        "FieldDecl",
        "CXXMethodDecl",
        "CompoundStmt",
        "IfStmt",
        "WhileStmt",
        "DoStmt",
        "ForStmt",
        "ConditionalOperator",
        "BinaryOperator",
        "CXXMemberCallExpr",
        "MemberExpr",
        "CXXThisExpr",
        "DeclRefExpr",
        "ReturnStmt",
    }
)

# Tagged semantic references inside params, e.g. 'def:test.cpp#9'.
REF_TAGS = ("def:", "prev:", "base:")


class FactError(ValueError):
    """Raised for invalid fact input (syntax or database consistency)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FactSyntaxError(FactError):
    pass


class MalformedNodeError(FactError):
    pass


@dataclass(frozen=True, order=True)
class SourceLoc:
    file: str
    line: int
    column: int
    end_line: int | None = None
    end_column: int | None = None

    def __post_init__(self):
        if self.line < 1 or self.column < 1:
            raise ValueError(f"source positions are 1-based, got {self.line}:{self.column}")
        if self.end_line is not None:
            end = (self.end_line, self.end_column or 0)
            if end < (self.line, self.column):
                raise ValueError(f"range end {end} precedes start {(self.line, self.column)}")

    @property
    def start(self) -> tuple[int, int]:
        return (self.line, self.column)

    @property
    def end(self) -> tuple[int, int]:
        if self.end_line is None:
            return self.start
        return (self.end_line, self.end_column or self.column)

    def short(self) -> str:
        return f"{self.line}:{self.column}"

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class AstNode:
    file: str
    ast_order: int
    id: str
    parent_id: str | None
    node_type: str
    src_loc: str | None
    params: tuple[str, ...] = ()

    @property
    def key(self) -> tuple[str, str]:
        return (self.file, self.id)

    def ref(self, tag: str) -> str | None:
        """Value of the tagged reference ``tag`` (e.g. ``'def:'``) or None."""
        for p in self.params:
            if p.startswith(tag):
                return p[len(tag):]
        return None

    def refs(self, tag: str) -> list[str]:
        return [p[len(tag):] for p in self.params if p.startswith(tag)]


def qualified_id(file: str, node_id: str) -> str:
    """Globally unique string for a node; ids that already carry their
    file prefix (``<file>#<n>``) are returned unchanged."""
    if node_id.startswith(file + "#"):
        return node_id
    return f"{file}#{node_id}"


# --------------------------------------------------------------------------
# Source location strings
# --------------------------------------------------------------------------

_LOC_PART = re.compile(
    r"^(?:(?P<col>col:(?P<c0>\d+))|(?P<line>line:(?P<l1>\d+):(?P<c1>\d+))|(?P<file>.+):(?P<l2>\d+):(?P<c2>\d+))$"
)


def _parse_loc_part(text: str):
    """Return (file|None, line|None, col) for one Clang location component,
    or None for unusable components such as ``<invalid sloc>``."""
    m = _LOC_PART.match(text.strip())
    if not m:
        return None
    if m.group("col"):
        return (None, None, int(m.group("c0")))
    if m.group("line"):
        return (None, int(m.group("l1")), int(m.group("c1")))
    return (m.group("file"), int(m.group("l2")), int(m.group("c2")))


def parse_src_loc(text: str, base: SourceLoc | None = None, default_file: str | None = None) -> SourceLoc | None:
    """Resolve a Clang-style range string against ``base``.

    ``'<test.cpp:3:3, line:6:3>'``, ``'<line:3:3, col:9>'`` and ``'<col:4>'``
    are accepted; missing file/line components come from ``base``.
    """
    body = text.strip()
    if body.startswith("<") and body.endswith(">"):
        body = body[1:-1]
    parts = [p for p in body.split(", ")] if body else []
    if not parts:
        return None
    first = _parse_loc_part(parts[0])
    if first is None:
        return None
    file, line, col = first
    if file is None:
        file = base.file if base else default_file
    if line is None:
        line = base.line if base else None
    if file is None or line is None:
        return None
    end_line = end_col = None
    if len(parts) > 1:
        second = _parse_loc_part(parts[1])
        if second is not None:
            _, l2, c2 = second
            end_line = l2 if l2 is not None else line
            end_col = c2
            if (end_line, end_col) < (line, col):
                end_line = end_col = None
    return SourceLoc(file, line, col, end_line, end_col)


def format_src_loc(loc: SourceLoc, with_file: bool = True) -> str:
    start = f"{loc.file}:{loc.line}:{loc.column}" if with_file else f"line:{loc.line}:{loc.column}"
    if loc.end_line is None:
        return f"<{start}>"
    return f"<{start}, line:{loc.end_line}:{loc.end_column}>"


# --------------------------------------------------------------------------
# Database
# --------------------------------------------------------------------------


class FactDb:
    """Immutable, indexed set of AST facts.

    Nodes are keyed by ``(file, id)``. ``lines`` optionally maps keys to the
    line a fact was read from so validation errors can point at the input.
    """

    def __init__(self, nodes: Iterable[AstNode], lines: dict[tuple[str, str], int] | None = None):
        lines = lines or {}
        self._nodes: dict[tuple[str, str], AstNode] = {}
        for node in nodes:
            if node.key in self._nodes:
                raise MalformedNodeError(f"duplicate node id {node.id!r} in {node.file!r}")
            self._nodes[node.key] = node
        self._children: dict[tuple[str, str], tuple[AstNode, ...]] = {}
        self._by_type: dict[str, tuple[AstNode, ...]] = {}
        self._loc_cache: dict[tuple[str, str], SourceLoc | None] = {}
        self._index(lines)

    def _index(self, lines):
        children: dict[tuple[str, str], list[AstNode]] = {}
        by_type: dict[str, list[AstNode]] = {}
        for node in self._nodes.values():
            by_type.setdefault(node.node_type, []).append(node)
            if node.parent_id is None:
                continue
            pkey = (node.file, node.parent_id)
            if pkey not in self._nodes:
                raise MalformedNodeError(
                    f"node {node.id!r} in {node.file!r} has dangling parent {node.parent_id!r}",
                    lines.get(node.key),
                )
            children.setdefault(pkey, []).append(node)
        for pkey, kids in children.items():
            kids.sort(key=lambda n: n.ast_order)
            for a, b in zip(kids, kids[1:]):
                if a.ast_order == b.ast_order:
                    raise MalformedNodeError(
                        f"siblings {a.id!r} and {b.id!r} under {pkey[1]!r} share ast_order {a.ast_order}",
                        lines.get(b.key),
                    )
            self._children[pkey] = tuple(kids)
        for t, ns in by_type.items():
            self._by_type[t] = tuple(sorted(ns, key=_node_sort_key))
        # every node must hang below a root; catches parent cycles
        reached = 0
        stack = [n for n in self._nodes.values() if n.parent_id is None]
        while stack:
            n = stack.pop()
            reached += 1
            stack.extend(self._children.get(n.key, ()))
        if reached != len(self._nodes):
            raise MalformedNodeError("parent links form a cycle")
        for node in self._nodes.values():
            if node.node_type == "MemberExpr":
                if len(node.params) < 2:
                    raise MalformedNodeError(f"MemberExpr {node.id!r} lacks name/callee params", lines.get(node.key))
                callee = node.params[-1]
                if (node.file, callee) not in self._nodes:
                    raise MalformedNodeError(
                        f"MemberExpr {node.id!r} references unknown declaration {callee!r}",
                        lines.get(node.key),
                    )
            for tag in REF_TAGS:
                for target in node.refs(tag):
                    if (node.file, target) not in self._nodes:
                        raise MalformedNodeError(
                            f"{node.node_type} {node.id!r} has dangling reference {tag}{target}",
                            lines.get(node.key),
                        )

    # -- basic access ------------------------------------------------------

    def __len__(self) -> int:
        return len(self._nodes)

    def __iter__(self) -> Iterator[AstNode]:
        return iter(self.sorted_nodes())

    def __contains__(self, key) -> bool:
        return key in self._nodes

    def __eq__(self, other) -> bool:
        if not isinstance(other, FactDb):
            return NotImplemented
        return self._nodes == other._nodes

    def __hash__(self):
        return hash(frozenset(self._nodes.values()))

    def __repr__(self) -> str:
        return f"FactDb({len(self)} nodes, files={self.files()})"

    def sorted_nodes(self) -> list[AstNode]:
        """Nodes in file order, each file in preorder."""
        out = []
        for file in self.files():
            for root in self.roots(file):
                out.extend(self._preorder(root))
        return out

    def _preorder(self, node: AstNode) -> Iterator[AstNode]:
        stack = [node]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(self._children.get(n.key, ())))

    def files(self) -> list[str]:
        return sorted({f for f, _ in self._nodes})

    def roots(self, file: str) -> list[AstNode]:
        return sorted(
            (n for n in self._nodes.values() if n.file == file and n.parent_id is None),
            key=_node_sort_key,
        )

    def get(self, file: str, node_id: str) -> AstNode:
        try:
            return self._nodes[(file, node_id)]
        except KeyError:
            raise KeyError(f"no node {node_id!r} in {file!r}") from None

    def find(self, file: str, node_id: str) -> AstNode | None:
        return self._nodes.get((file, node_id))

    def children(self, node: AstNode) -> tuple[AstNode, ...]:
        return self._children.get(node.key, ())

    def parent(self, node: AstNode) -> AstNode | None:
        if node.parent_id is None:
            return None
        return self._nodes[(node.file, node.parent_id)]

    def ancestors(self, node: AstNode) -> Iterator[AstNode]:
        """Proper ancestors, nearest first."""
        p = self.parent(node)
        while p is not None:
            yield p
            p = self.parent(p)

    def descendants(self, node: AstNode) -> Iterator[AstNode]:
        it = self._preorder(node)
        next(it)
        return it

    def by_type(self, node_type: str) -> tuple[AstNode, ...]:
        return self._by_type.get(node_type, ())

    # -- locations -----------------------------------------------------------

    def location(self, node: AstNode) -> SourceLoc | None:
        """Source location of ``node``; missing pieces come from ancestors."""
        if node.key in self._loc_cache:
            return self._loc_cache[node.key]
        parent = self.parent(node)
        base = self.location(parent) if parent is not None else None
        loc = None
        if node.src_loc is not None:
            loc = parse_src_loc(node.src_loc, base, default_file=node.file)
        if loc is None:
            loc = base
        self._loc_cache[node.key] = loc
        return loc


def _node_sort_key(n: AstNode):
    return (n.file, _natural_key(n.id))


def _natural_key(text: str):
    return tuple(int(t) if t.isdigit() else t for t in re.split(r"(\d+)", text))


natural_key = _natural_key


# --------------------------------------------------------------------------
# Structural queries
# --------------------------------------------------------------------------


def edge(db: FactDb, file: str, parent: str) -> list[str]:
    """Ids of the syntactic children of ``parent``, by ast_order."""
    node = db.find(file, parent)
    if node is None:
        return []
    return [c.id for c in db.children(node)]


def transitive(db: FactDb, file: str, ancestor: str) -> list[str]:
    """Ids of all proper descendants of ``ancestor`` in preorder."""
    node = db.find(file, ancestor)
    if node is None:
        return []
    return [d.id for d in db.descendants(node)]


# --------------------------------------------------------------------------
# Typed accessors
# --------------------------------------------------------------------------


class MemberExprFact(NamedTuple):
    file: str
    id: str
    ast_order: int
    name: str
    callee_id: str


class MethodDeclFact(NamedTuple):
    file: str
    id: str
    ast_order: int
    name: str
    signature: str
    virtual: bool
    definition_id: str | None
    previous_id: str | None
    has_body: bool


class RecordDeclFact(NamedTuple):
    file: str
    id: str
    ast_order: int
    kind: str
    name: str
    base_ids: tuple[str, ...]


class FieldDeclFact(NamedTuple):
    file: str
    id: str
    ast_order: int
    name: str
    type: str


class StmtFact(NamedTuple):
    file: str
    id: str
    ast_order: int
    flags: tuple[str, ...]


class OperatorFact(NamedTuple):
    file: str
    id: str
    ast_order: int
    operator: str


def _need(node: AstNode, n: int, what: str):
    if len(node.params) < n:
        raise MalformedNodeError(
            f"{node.node_type} {node.id!r} in {node.file!r}: params {list(node.params)} too short for {what}"
        )


def member_expr(db: FactDb) -> list[MemberExprFact]:
    out = []
    for n in db.by_type("MemberExpr"):
        _need(n, 2, "name and callee id")
        out.append(MemberExprFact(n.file, n.id, n.ast_order, n.params[-2], n.params[-1]))
    return out


def cxx_method_decl(db: FactDb) -> list[MethodDeclFact]:
    out = []
    for n in db.by_type("CXXMethodDecl"):
        _need(n, 2, "name and signature")
        body = any(c.node_type == "CompoundStmt" for c in db.children(n))
        out.append(
            MethodDeclFact(
                n.file, n.id, n.ast_order, n.params[0], n.params[1],
                "virtual" in n.params, n.ref("def:"), n.ref("prev:"), body,
            )
        )
    return out


def cxx_record_decl(db: FactDb) -> list[RecordDeclFact]:
    out = []
    for n in db.by_type("CXXRecordDecl"):
        _need(n, 2, "record kind and name")
        out.append(RecordDeclFact(n.file, n.id, n.ast_order, n.params[0], n.params[1], tuple(n.refs("base:"))))
    return out


def field_decl(db: FactDb) -> list[FieldDeclFact]:
    out = []
    for n in db.by_type("FieldDecl"):
        _need(n, 2, "name and type")
        out.append(FieldDeclFact(n.file, n.id, n.ast_order, n.params[0], n.params[1]))
    return out


def _stmts(db: FactDb, node_type: str) -> list[StmtFact]:
    return [StmtFact(n.file, n.id, n.ast_order, tuple(n.params)) for n in db.by_type(node_type)]


def if_stmt(db: FactDb) -> list[StmtFact]:
    return _stmts(db, "IfStmt")


def loop_stmt(db: FactDb) -> list[StmtFact]:
    return _stmts(db, "WhileStmt") + _stmts(db, "DoStmt") + _stmts(db, "ForStmt")


def conditional_operator(db: FactDb) -> list[StmtFact]:
    return _stmts(db, "ConditionalOperator")


def binary_operator(db: FactDb) -> list[OperatorFact]:
    out = []
    for n in db.by_type("BinaryOperator"):
        _need(n, 1, "operator spelling")
        out.append(OperatorFact(n.file, n.id, n.ast_order, n.params[-1]))
    return out


_ACCESSORS = {
    "MemberExpr": member_expr,
    "CXXMethodDecl": cxx_method_decl,
    "CXXRecordDecl": cxx_record_decl,
    "FieldDecl": field_decl,
    "IfStmt": if_stmt,
    "WhileStmt": lambda db: _stmts(db, "WhileStmt"),
    "DoStmt": lambda db: _stmts(db, "DoStmt"),
    "ForStmt": lambda db: _stmts(db, "ForStmt"),
    "ConditionalOperator": conditional_operator,
    "BinaryOperator": binary_operator,
}


def typed_accessor(db: FactDb, node_type: str) -> list:
    """Unpacked view of every node of ``node_type``."""
    try:
        return _ACCESSORS[node_type](db)
    except KeyError:
        raise ValueError(f"no typed accessor for {node_type!r}") from None


# --------------------------------------------------------------------------
# Text format
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>[#%][^\n]*)
  | (?P<quoted>'(?:[^'\\\n]|''|\\.)*')
  | (?P<int>-?\d+)
  | (?P<atom>[a-z][A-Za-z0-9_]*)
  | (?P<punct>[(),\[\].])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    pos, line = 0, 1
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise FactSyntaxError(f"unexpected character {text[pos]!r}", line)
        kind = m.lastgroup
        value = m.group()
        if kind == "nl":
            line += 1
        elif kind == "quoted":
            yield ("str", _unescape(value[1:-1]), line)
        elif kind == "int":
            yield ("int", int(value), line)
        elif kind == "atom":
            yield ("atom", value, line)
        elif kind == "punct":
            yield (value, value, line)
        pos = m.end()
    yield ("eof", None, line)


class _FactParser:
    def __init__(self, text: str):
        self.tokens = list(_tokenize(text))
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind: str, what: str):
        tok = self.tokens[self.pos]
        if tok[0] != kind:
            shown = "end of input" if tok[0] == "eof" else repr(tok[1])
            raise FactSyntaxError(f"expected {what}, found {shown}", tok[2])
        self.pos += 1
        return tok

    def string(self, what: str, allow_none: bool = False) -> str | None:
        tok = self.peek()
        if allow_none and tok[0] == "atom" and tok[1] == "none":
            self.pos += 1
            return None
        if tok[0] in ("str", "atom"):
            self.pos += 1
            return tok[1]
        raise FactSyntaxError(f"expected {what}, found {tok[1]!r}", tok[2])

    def facts(self) -> Iterator[tuple[AstNode, int]]:
        while self.peek()[0] != "eof":
            _, head, line = self.take("atom", "'node'")
            if head != "node":
                raise FactSyntaxError(f"unknown fact {head!r}", line)
            self.take("(", "'('")
            file = self.string("file name")
            self.take(",", "','")
            order = self.take("int", "ast order")[1]
            if order < 0:
                raise FactSyntaxError("negative ast order", line)
            self.take(",", "','")
            node_id = self.string("node id")
            self.take(",", "','")
            parent = self.string("parent id", allow_none=True)
            self.take(",", "','")
            node_type = self.string("node type")
            self.take(",", "','")
            loc = self.string("source location", allow_none=True)
            self.take(",", "','")
            params = self.param_list()
            self.take(")", "')'")
            self.take(".", "'.'")
            yield AstNode(file, order, node_id, parent, node_type, loc, tuple(params)), line

    def param_list(self) -> list[str]:
        self.take("[", "'['")
        out: list[str] = []
        if self.peek()[0] == "]":
            self.pos += 1
            return out
        while True:
            tok = self.peek()
            if tok[0] in ("str", "atom"):
                out.append(tok[1])
            elif tok[0] == "int":
                out.append(str(tok[1]))
            else:
                raise FactSyntaxError(f"expected parameter, found {tok[1]!r}", tok[2])
            self.pos += 1
            if self.peek()[0] == ",":
                self.pos += 1
                continue
            self.take("]", "']'")
            return out


def load_facts(source) -> FactDb:
    """Parse fact text (a string or a readable stream) into a FactDb."""
    text = source if isinstance(source, str) else source.read()
    nodes: list[AstNode] = []
    lines: dict[tuple, int] = {}
    for node, line in _FactParser(text).facts():
        if node.key in lines:
            raise MalformedNodeError(
                f"duplicate node id {node.id!r} in {node.file!r} (lines {lines[node.key]} and {line})", line
            )
        lines[node.key] = line
        nodes.append(node)
    return FactDb(nodes, lines)


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'"}
_ESCAPE_RE = re.compile(r"''|\\(.)")


def _unescape(body: str) -> str:
    def sub(m):
        if m.group(0) == "''":
            return "'"
        return _ESCAPES.get(m.group(1), m.group(0))

    return _ESCAPE_RE.sub(sub, body)


def _quote(s: str) -> str:
    s = s.replace("\\", "\\\\").replace("\n", "\\n").replace("\t", "\\t").replace("\r", "\\r")
    return "'" + s.replace("'", "''") + "'"


def format_fact(node: AstNode) -> str:
    parent = "none" if node.parent_id is None else _quote(node.parent_id)
    loc = "none" if node.src_loc is None else _quote(node.src_loc)
    params = ", ".join(_quote(p) for p in node.params)
    return (
        f"node({_quote(node.file)}, {node.ast_order}, {_quote(node.id)}, {parent}, "
        f"{_quote(node.node_type)}, {loc}, [{params}])."
    )


def serialize_facts(db: FactDb, header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend(format_fact(n) for n in db.sorted_nodes())
    return "\n".join(lines) + ("\n" if lines else "")
