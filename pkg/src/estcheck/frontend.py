"""Parser for a small C++ subset that emits AST facts.

Supported: classes with fields and (virtual) method declarations, single
inheritance, nested classes, inline and out-of-class method definitions
without parameters, ``if``/``else``, ``while``, ``do``/``while``, ``for``,
``?:``, ``&&``/``||``, ``return``, member calls ``name()``, ``this->name()``,
``obj.name()`` and ``ptr->name()`` on fields, and ``#include "file"``.

The emitted facts follow the layout of Clang's AST dump: method
declarations live under their ``CXXRecordDecl``, out-of-class definitions
under the ``TranslationUnitDecl``, and every call is the triple
``CXXMemberCallExpr -> MemberExpr -> CXXThisExpr | DeclRefExpr`` with the
callee declaration id as the last ``MemberExpr`` parameter.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .facts import AstNode, FactDb

log = logging.getLogger(__name__)

SOURCE_SUFFIXES = (".cpp", ".cc", ".cxx", ".C")
HEADER_SUFFIXES = (".h", ".hh", ".hpp", ".hxx")


class FrontendError(Exception):
    def __init__(self, message: str, file: str | None = None, line: int | None = None, column: int | None = None):
        self.file, self.line, self.column = file, line, column
        where = ""
        if file is not None:
            where = f"{file}:{line}:{column}: " if line is not None else f"{file}: "
        super().__init__(where + message)


# --------------------------------------------------------------------------
# Lexer
# --------------------------------------------------------------------------

KEYWORDS = {
    "class", "struct", "public", "private", "protected", "virtual", "void", "bool", "int",
    "if", "else", "while", "do", "for", "return", "true", "false", "this",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<line_comment>//[^\n]*)
  | (?P<block_comment>/\*.*?\*/)
  | (?P<directive>\#[^\n]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<number>\d+)
  | (?P<op>::|->|&&|\|\||==|!=|<=|>=|[{}()\[\];:.,?!<>=+\-*/%&|~])
    """,
    re.VERBOSE | re.DOTALL,
)

_INCLUDE_RE = re.compile(r'#\s*include\s*"([^"]+)"')


@dataclass(frozen=True)
class Token:
    kind: str  # ident, kw, number, op, include, eof
    value: str
    line: int
    col: int
    end_line: int
    end_col: int


def tokenize(text: str, file: str) -> list[Token]:
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise FrontendError(f"unexpected character {text[pos]!r}", file, line, pos - line_start + 1)
        kind, value = m.lastgroup, m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "block_comment":
            nls = value.count("\n")
            if nls:
                line += nls
                line_start = pos + value.rfind("\n") + 1
        elif kind == "directive":
            inc = _INCLUDE_RE.match(value)
            if inc:
                out.append(Token("include", inc.group(1), line, col, line, col + len(value) - 1))
            elif not re.match(r"#\s*(pragma|ifndef|ifdef|define|endif|if|else|elif)\b", value):
                raise FrontendError(f"unsupported preprocessor directive {value.strip()!r}", file, line, col)
        elif kind in ("ident", "number", "op"):
            if kind == "ident" and value in KEYWORDS:
                kind = "kw"
            out.append(Token(kind, value, line, col, line, col + len(value) - 1))
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1, line, pos - line_start + 1))
    return out


# --------------------------------------------------------------------------
# Syntax objects
# --------------------------------------------------------------------------

Pos = tuple  # (line, col)


@dataclass
class Syn:
    file: str
    start: Pos
    end: Pos


@dataclass
class Include(Syn):
    path: str = ""


@dataclass
class FieldMember(Syn):
    name: str = ""
    type: str = ""


@dataclass
class MethodMember(Syn):
    name: str = ""
    ret: str = "void"
    virtual: bool = False
    body: "Block | None" = None


@dataclass
class ClassDecl(Syn):
    kind: str = "class"
    name: str = ""
    bases: list = field(default_factory=list)
    members: list = field(default_factory=list)


@dataclass
class MethodDef(Syn):
    ret: str = "void"
    scope: list = field(default_factory=list)
    name: str = ""
    body: "Block | None" = None


@dataclass
class Block(Syn):
    stmts: list = field(default_factory=list)


@dataclass
class If(Syn):
    cond: object = None
    then: object = None
    else_: object = None


@dataclass
class While(Syn):
    cond: object = None
    body: object = None


@dataclass
class Do(Syn):
    body: object = None
    cond: object = None


@dataclass
class For(Syn):
    init: object = None
    cond: object = None
    inc: object = None
    body: object = None


@dataclass
class Return(Syn):
    value: object = None


@dataclass
class ExprStmt(Syn):
    expr: object = None


@dataclass
class NullStmt(Syn):
    pass


@dataclass
class Call(Syn):
    receiver: str | None = None  # None: implicit this, 'this': explicit this, else field name
    receiver_start: Pos = (0, 0)
    name: str = ""
    arrow: bool = False


@dataclass
class Name(Syn):
    name: str = ""


@dataclass
class Literal(Syn):
    kind: str = ""
    value: str = ""


@dataclass
class Unary(Syn):
    op: str = ""
    arg: object = None


@dataclass
class Binary(Syn):
    op: str = ""
    lhs: object = None
    rhs: object = None


@dataclass
class Ternary(Syn):
    cond: object = None
    then: object = None
    else_: object = None


@dataclass
class Paren(Syn):
    inner: object = None


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

_TYPE_KWS = {"void", "bool", "int"}


class Parser:
    def __init__(self, text: str, file: str):
        self.file = file
        self.toks = tokenize(text, file)
        self.i = 0

    # token helpers
    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, value: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t.kind in ("op", "kw") and t.value == value

    def error(self, msg: str, tok: Token | None = None):
        tok = tok or self.peek()
        found = "end of input" if tok.kind == "eof" else repr(tok.value)
        raise FrontendError(f"{msg}, found {found}", self.file, tok.line, tok.col)

    def expect(self, value: str) -> Token:
        if not self.at(value):
            self.error(f"expected {value!r}")
        tok = self.peek()
        self.i += 1
        return tok

    def ident(self) -> Token:
        tok = self.peek()
        if tok.kind != "ident":
            self.error("expected identifier")
        self.i += 1
        return tok

    def type_name(self) -> Token:
        tok = self.peek()
        if tok.kind == "ident" or (tok.kind == "kw" and tok.value in _TYPE_KWS):
            self.i += 1
            return tok
        self.error("expected type")

    def _span(self, start: Token) -> dict:
        prev = self.toks[self.i - 1]
        return dict(file=self.file, start=(start.line, start.col), end=(prev.end_line, prev.end_col))

    # top level
    def unit(self) -> list:
        items = []
        while self.peek().kind != "eof":
            tok = self.peek()
            if tok.kind == "include":
                self.i += 1
                items.append(Include(self.file, (tok.line, tok.col), (tok.end_line, tok.end_col), path=tok.value))
            elif self.at("class") or self.at("struct"):
                items.append(self.class_decl())
            elif self.at(";"):
                self.i += 1
            else:
                items.append(self.method_def())
        return items

    def class_decl(self) -> ClassDecl:
        start = self.peek()
        kind = self.peek().value
        self.i += 1
        name = self.ident().value
        bases = []
        if self.at(":"):
            self.i += 1
            while True:
                if self.peek().value in ("public", "private", "protected"):
                    self.i += 1
                bases.append(self.qualified_name())
                if not self.at(","):
                    break
                self.i += 1
            if len(bases) > 1:
                self.error("multiple inheritance is not supported", start)
        self.expect("{")
        members = []
        while not self.at("}"):
            if self.peek().kind == "eof":
                self.error("expected '}'")
            if self.peek().value in ("public", "private", "protected") and self.at(":", 1):
                self.i += 2
            elif self.at("class") or self.at("struct"):
                members.append(self.class_decl())
            elif self.at(";"):
                self.i += 1
            else:
                members.append(self.member())
        self.expect("}")
        self.expect(";")
        return ClassDecl(**self._span(start), kind=kind, name=name, bases=bases, members=members)

    def qualified_name(self) -> str:
        parts = [self.ident().value]
        while self.at("::"):
            self.i += 1
            parts.append(self.ident().value)
        return "::".join(parts)

    def member(self):
        start = self.peek()
        virtual = False
        if self.at("virtual"):
            virtual = True
            self.i += 1
        ty = self.type_name().value
        pointer = False
        if self.at("*"):
            pointer = True
            self.i += 1
        name_tok = self.ident()
        if pointer and self.at("("):
            self.error("pointer return types are not supported")
        if self.at("("):
            self.expect("(")
            self.params()
            self.expect(")")
            if self.at("="):  # pure virtual: '= 0'
                self.i += 1
                tok = self.peek()
                if tok.kind != "number" or tok.value != "0":
                    self.error("expected '0'")
                self.i += 1
            body = None
            if self.at("{"):
                body = self.block()
            else:
                self.expect(";")
            return MethodMember(**self._span(start), name=name_tok.value, ret=ty, virtual=virtual, body=body)
        if virtual:
            self.error("'virtual' on a field", start)
        self.expect(";")
        return FieldMember(**self._span(start), name=name_tok.value, type=ty + " *" if pointer else ty)

    def params(self):
        if self.at("void") and self.at(")", 1):
            self.i += 1
        elif not self.at(")"):
            self.error("method parameters are not supported")

    def method_def(self) -> MethodDef:
        start = self.peek()
        ret = self.type_name().value
        parts = [self.ident().value]
        while self.at("::"):
            self.i += 1
            parts.append(self.ident().value)
        if len(parts) < 2:
            raise FrontendError(
                f"free function {parts[0]!r} is not supported (define methods as Class::name)",
                self.file, start.line, start.col,
            )
        self.expect("(")
        self.params()
        self.expect(")")
        body = self.block()
        return MethodDef(**self._span(start), ret=ret, scope=parts[:-1], name=parts[-1], body=body)

    # statements
    def block(self) -> Block:
        start = self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.peek().kind == "eof":
                self.error("expected '}'")
            stmts.append(self.statement())
        self.expect("}")
        return Block(**self._span(start), stmts=stmts)

    def statement(self):
        start = self.peek()
        if self.at("{"):
            return self.block()
        if self.at(";"):
            self.i += 1
            return NullStmt(**self._span(start))
        if self.at("if"):
            self.i += 1
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.statement()
            els = None
            if self.at("else"):
                self.i += 1
                els = self.statement()
            return If(**self._span(start), cond=cond, then=then, else_=els)
        if self.at("while"):
            self.i += 1
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            body = self.statement()
            return While(**self._span(start), cond=cond, body=body)
        if self.at("do"):
            self.i += 1
            body = self.statement()
            self.expect("while")
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            self.expect(";")
            return Do(**self._span(start), body=body, cond=cond)
        if self.at("for"):
            self.i += 1
            self.expect("(")
            init = None if self.at(";") else self.expr()
            self.expect(";")
            cond = None if self.at(";") else self.expr()
            self.expect(";")
            inc = None if self.at(")") else self.expr()
            self.expect(")")
            body = self.statement()
            return For(**self._span(start), init=init, cond=cond, inc=inc, body=body)
        if self.at("return"):
            self.i += 1
            value = None if self.at(";") else self.expr()
            self.expect(";")
            return Return(**self._span(start), value=value)
        e = self.expr()
        self.expect(";")
        return ExprStmt(**self._span(start), expr=e)

    # expressions
    def expr(self):
        start = self.peek()
        lhs = self.ternary()
        if self.at("="):
            self.i += 1
            rhs = self.expr()
            return Binary(**self._span(start), op="=", lhs=lhs, rhs=rhs)
        return lhs

    def ternary(self):
        start = self.peek()
        cond = self.logical_or()
        if self.at("?"):
            self.i += 1
            a = self.expr()
            self.expect(":")
            b = self.ternary()
            return Ternary(**self._span(start), cond=cond, then=a, else_=b)
        return cond

    def _binary(self, ops, sub):
        start = self.peek()
        lhs = sub()
        while self.peek().kind == "op" and self.peek().value in ops:
            op = self.peek().value
            self.i += 1
            rhs = sub()
            lhs = Binary(**self._span(start), op=op, lhs=lhs, rhs=rhs)
        return lhs

    def logical_or(self):
        return self._binary(("||",), self.logical_and)

    def logical_and(self):
        return self._binary(("&&",), self.equality)

    def equality(self):
        return self._binary(("==", "!="), self.relational)

    def relational(self):
        return self._binary(("<", ">", "<=", ">="), self.additive)

    def additive(self):
        return self._binary(("+", "-"), self.unary)

    def unary(self):
        start = self.peek()
        if self.peek().kind == "op" and self.peek().value in ("!", "-"):
            op = self.peek().value
            self.i += 1
            arg = self.unary()
            return Unary(**self._span(start), op=op, arg=arg)
        return self.primary()

    def primary(self):
        tok = self.peek()
        if self.at("("):
            self.i += 1
            inner = self.expr()
            self.expect(")")
            return Paren(**self._span(tok), inner=inner)
        if tok.kind == "number":
            self.i += 1
            return Literal(**self._span(tok), kind="int", value=tok.value)
        if self.at("true") or self.at("false"):
            self.i += 1
            return Literal(**self._span(tok), kind="bool", value=tok.value)
        if self.at("this"):
            self.i += 1
            self.expect("->")
            name = self.ident().value
            self.expect("(")
            self.no_args()
            self.expect(")")
            return Call(**self._span(tok), receiver="this", receiver_start=(tok.line, tok.col), name=name)
        if tok.kind == "ident":
            self.i += 1
            if self.at("("):
                self.i += 1
                self.no_args()
                self.expect(")")
                return Call(**self._span(tok), receiver=None, receiver_start=(tok.line, tok.col), name=tok.value)
            if self.at(".") or self.at("->"):
                arrow = self.at("->")
                self.i += 1
                name = self.ident().value
                self.expect("(")
                self.no_args()
                self.expect(")")
                return Call(
                    **self._span(tok), receiver=tok.value, receiver_start=(tok.line, tok.col), name=name, arrow=arrow
                )
            return Name(**self._span(tok), name=tok.value)
        self.error("expected expression")

    def no_args(self):
        if not self.at(")"):
            self.error("call arguments are not supported")


def parse_unit(text: str, file: str) -> list:
    return Parser(text, file).unit()


# --------------------------------------------------------------------------
# Fact emission
# --------------------------------------------------------------------------


@dataclass
class _ClassInfo:
    qual: str
    name: str
    record_id: str
    base: "_ClassInfo | None" = None
    methods: dict = field(default_factory=dict)  # name -> (decl id, ret type)
    fields: dict = field(default_factory=dict)  # name -> (field id, type, scope qual)
    nested: dict = field(default_factory=dict)


class _Emitter:
    def __init__(self, tu_file: str, sources: dict[str, str]):
        self.tu = tu_file
        self.sources = sources
        self.counter = 0
        self.rows: dict[str, list] = {}
        self.order: dict[str, int] = {}
        self.loc_file: dict[str, str | None] = {}
        self.classes: dict[str, _ClassInfo] = {}
        self.decl_node: dict[str, str] = {}  # method decl id -> node id
        self.pending: list = []

    # -- node creation ---------------------------------------------------
    def new(self, parent: str | None, node_type: str, syn: Syn | None, params: Iterable[str] = (), implicit=False) -> str:
        nid = f"{self.tu}#{self.counter}"
        self.counter += 1
        order = 0
        if parent is not None:
            order = self.order.get(parent, 0)
            self.order[parent] = order + 1
        loc = None
        file = self.loc_file.get(parent) if parent is not None else None
        if syn is not None and not implicit:
            (l1, c1), (l2, c2) = syn.start, syn.end
            if syn.file != file:
                loc = f"<{syn.file}:{l1}:{c1}, line:{l2}:{c2}>"
            else:
                loc = f"<line:{l1}:{c1}, line:{l2}:{c2}>"
            file = syn.file
        self.loc_file[nid] = file
        self.rows[nid] = [self.tu, order, nid, parent, node_type, loc, list(params)]
        return nid

    def facts(self) -> list[AstNode]:
        return [AstNode(r[0], r[1], r[2], r[3], r[4], r[5], tuple(r[6])) for r in self.rows.values()]

    # -- translation unit --------------------------------------------------
    def emit(self, items: list, end: Pos):
        root_syn = Syn(self.tu, (1, 1), end)
        root = self.new(None, "TranslationUnitDecl", root_syn)
        for item in items:
            if isinstance(item, ClassDecl):
                self.declare_class(root, item, outer=None)
            elif isinstance(item, MethodDef):
                self.declare_definition(root, item)
        for decl_id, body, cls in self.pending:
            self.body(decl_id, body, cls)

    def lookup_class(self, name: str, scope: _ClassInfo | None) -> _ClassInfo | None:
        prefix = scope.qual if scope else ""
        while True:
            cand = f"{prefix}::{name}" if prefix else name
            if cand in self.classes:
                return self.classes[cand]
            if not prefix:
                return None
            prefix = prefix.rpartition("::")[0]

    def declare_class(self, parent: str, c: ClassDecl, outer: _ClassInfo | None):
        qual = f"{outer.qual}::{c.name}" if outer else c.name
        if qual in self.classes:
            raise FrontendError(f"redefinition of class {qual!r}", c.file, *c.start)
        base = None
        params = [c.kind, c.name, "definition"]
        if c.bases:
            base = self.lookup_class(c.bases[0], outer)
            if base is None:
                raise FrontendError(f"unknown base class {c.bases[0]!r}", c.file, *c.start)
            params.append(f"base:{base.record_id}")
        rid = self.new(parent, "CXXRecordDecl", c, params)
        info = _ClassInfo(qual, c.name, rid, base)
        self.classes[qual] = info
        if outer:
            outer.nested[c.name] = info
        for m in c.members:
            if isinstance(m, FieldMember):
                fid = self.new(rid, "FieldDecl", m, [m.name, m.type])
                info.fields[m.name] = (fid, m.type)
            elif isinstance(m, MethodMember):
                if m.name in info.methods:
                    raise FrontendError(f"overloaded or duplicate method {qual}::{m.name}", m.file, *m.start)
                params = [m.name, f"{m.ret} (void)"]
                if m.virtual:
                    params.append("virtual")
                mid = self.new(rid, "CXXMethodDecl", m, params)
                info.methods[m.name] = (mid, m.ret)
                if m.body is not None:
                    self.pending.append((mid, m.body, info))
            elif isinstance(m, ClassDecl):
                self.declare_class(rid, m, info)

    def declare_definition(self, parent: str, d: MethodDef):
        qual = "::".join(d.scope)
        cls = self.classes.get(qual)
        if cls is None:
            raise FrontendError(f"unknown class {qual!r} for method {d.name!r}", d.file, *d.start)
        if d.name not in cls.methods:
            raise FrontendError(f"unresolved method name {qual}::{d.name}", d.file, *d.start)
        decl_id, ret = cls.methods[d.name]
        decl_row = self.rows[decl_id]
        if any(p.startswith("def:") for p in decl_row[6]) or any(
            pid == decl_id for pid, _, _ in self.pending
        ):
            raise FrontendError(f"redefinition of {qual}::{d.name}", d.file, *d.start)
        did = self.new(parent, "CXXMethodDecl", d, [d.name, f"{ret} (void)", f"prev:{decl_id}"])
        decl_row[6].append(f"def:{did}")
        self.pending.append((did, d.body, cls))

    # -- bodies --------------------------------------------------------------
    def body(self, parent: str, block: Block, cls: _ClassInfo):
        self.stmt(parent, block, cls)

    def stmt(self, parent: str, s, cls: _ClassInfo):
        if isinstance(s, Block):
            nid = self.new(parent, "CompoundStmt", s)
            for sub in s.stmts:
                self.stmt(nid, sub, cls)
        elif isinstance(s, If):
            nid = self.new(parent, "IfStmt", s, ["has_else"] if s.else_ is not None else [])
            self.expr(nid, s.cond, cls)
            self.stmt(nid, s.then, cls)
            if s.else_ is not None:
                self.stmt(nid, s.else_, cls)
        elif isinstance(s, While):
            nid = self.new(parent, "WhileStmt", s)
            self.expr(nid, s.cond, cls)
            self.stmt(nid, s.body, cls)
        elif isinstance(s, Do):
            nid = self.new(parent, "DoStmt", s)
            self.stmt(nid, s.body, cls)
            self.expr(nid, s.cond, cls)
        elif isinstance(s, For):
            flags = [f for f, part in (("has_init", s.init), ("has_cond", s.cond), ("has_inc", s.inc)) if part is not None]
            nid = self.new(parent, "ForStmt", s, flags)
            for part in (s.init, s.cond, s.inc):
                if part is not None:
                    self.expr(nid, part, cls)
            self.stmt(nid, s.body, cls)
        elif isinstance(s, Return):
            nid = self.new(parent, "ReturnStmt", s)
            if s.value is not None:
                self.expr(nid, s.value, cls)
        elif isinstance(s, ExprStmt):
            self.expr(parent, s.expr, cls)
        elif isinstance(s, NullStmt):
            self.new(parent, "NullStmt", s)
        else:  # pragma: no cover - parser produces only the above
            raise TypeError(s)

    def find_method(self, cls: _ClassInfo, name: str):
        c = cls
        while c is not None:
            if name in c.methods:
                return c.methods[name]
            c = c.base
        return None

    def find_field(self, cls: _ClassInfo, name: str):
        c = cls
        while c is not None:
            if name in c.fields:
                return c.fields[name], c
            c = c.base
        return None, None

    def expr(self, parent: str, e, cls: _ClassInfo):
        if isinstance(e, Call):
            self.call(parent, e, cls)
        elif isinstance(e, Name):
            fld, _ = self.find_field(cls, e.name)
            if fld is None:
                raise FrontendError(f"unresolved name {e.name!r}", e.file, *e.start)
            self.new(parent, "DeclRefExpr", e, [e.name, fld[0]])
        elif isinstance(e, Literal):
            ntype = "CXXBoolLiteralExpr" if e.kind == "bool" else "IntegerLiteral"
            self.new(parent, ntype, e, [e.value])
        elif isinstance(e, Unary):
            nid = self.new(parent, "UnaryOperator", e, [e.op])
            self.expr(nid, e.arg, cls)
        elif isinstance(e, Binary):
            nid = self.new(parent, "BinaryOperator", e, [e.op])
            self.expr(nid, e.lhs, cls)
            self.expr(nid, e.rhs, cls)
        elif isinstance(e, Ternary):
            nid = self.new(parent, "ConditionalOperator", e)
            self.expr(nid, e.cond, cls)
            self.expr(nid, e.then, cls)
            self.expr(nid, e.else_, cls)
        elif isinstance(e, Paren):
            nid = self.new(parent, "ParenExpr", e)
            self.expr(nid, e.inner, cls)
        else:  # pragma: no cover
            raise TypeError(e)

    def call(self, parent: str, e: Call, cls: _ClassInfo):
        if e.receiver in (None, "this"):
            target = cls
        else:
            fld, owner = self.find_field(cls, e.receiver)
            if fld is None:
                raise FrontendError(f"unresolved receiver {e.receiver!r}", e.file, *e.receiver_start)
            is_ptr = fld[1].endswith(" *")
            if is_ptr != e.arrow:
                op = "->" if is_ptr else "."
                raise FrontendError(f"use '{op}' to call through {e.receiver!r}", e.file, *e.receiver_start)
            target = self.lookup_class(fld[1].removesuffix(" *"), owner)
            if target is None:
                raise FrontendError(
                    f"receiver {e.receiver!r} has non-class type {fld[1]!r}", e.file, *e.receiver_start
                )
        found = self.find_method(target, e.name)
        if found is None:
            raise FrontendError(f"unresolved method name {target.qual}::{e.name}", e.file, *e.start)
        decl_id, ret = found
        call_id = self.new(parent, "CXXMemberCallExpr", e, [ret])
        arrow = "->" if e.arrow or e.receiver in (None, "this") else "."
        mem_id = self.new(call_id, "MemberExpr", e, [arrow, e.name, decl_id])
        if e.receiver is None:
            self.new(mem_id, "CXXThisExpr", e, ["implicit"], implicit=True)
        elif e.receiver == "this":
            rs = Syn(e.file, e.receiver_start, (e.receiver_start[0], e.receiver_start[1] + 3))
            self.new(mem_id, "CXXThisExpr", rs, ["this"])
        else:
            fld, _ = self.find_field(cls, e.receiver)
            rs = Syn(e.file, e.receiver_start, (e.receiver_start[0], e.receiver_start[1] + len(e.receiver) - 1))
            self.new(mem_id, "DeclRefExpr", rs, [e.receiver, fld[0]])


def _expand_includes(file: str, sources: dict[str, str], stack: tuple[str, ...] = ()) -> list:
    if file in stack:
        chain = " -> ".join(stack + (file,))
        raise FrontendError(f"include cycle: {chain}", file)
    items = []
    for item in parse_unit(sources[file], file):
        if isinstance(item, Include):
            target = _resolve_include(item.path, file, sources)
            if target is None:
                raise FrontendError(f"unresolved include {item.path!r}", item.file, *item.start)
            items.extend(_expand_includes(target, sources, stack + (file,)))
        else:
            items.append(item)
    return items


def _resolve_include(path: str, from_file: str, sources: dict[str, str]) -> str | None:
    here = os.path.dirname(from_file)
    cand = os.path.normpath(os.path.join(here, path)).replace(os.sep, "/")
    if cand in sources:
        return cand
    cand = os.path.normpath(path).replace(os.sep, "/")
    return cand if cand in sources else None


def _end_of(text: str) -> Pos:
    lines = text.split("\n")
    if len(lines) > 1 and lines[-1] == "":
        lines.pop()
    return (max(len(lines), 1), max(len(lines[-1]) if lines else 1, 1))


def translation_units(files: Iterable[str]) -> list[str]:
    files = sorted(files)
    tus = [f for f in files if f.endswith(SOURCE_SUFFIXES)]
    return tus or files


def parse_subset(units) -> FactDb:
    """Parse ``units`` (mapping or pairs of path -> source text) into facts.

    Source files (``.cpp`` etc.) are translation units; headers only enter
    the database through ``#include``. With no source files present every
    unit is treated as a translation unit.
    """
    sources = dict(units.items() if isinstance(units, dict) else units)
    nodes: list[AstNode] = []
    for tu in translation_units(sources):
        items = _expand_includes(tu, sources)
        em = _Emitter(tu, sources)
        em.emit(items, _end_of(sources[tu]))
        nodes.extend(em.facts())
    return FactDb(nodes)


def read_sources(root: str | os.PathLike) -> dict[str, str]:
    """All C++ files under ``root`` keyed by their posix path relative to it."""
    root = Path(root)
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.suffix in SOURCE_SUFFIXES + HEADER_SUFFIXES:
            out[p.relative_to(root).as_posix()] = p.read_text(encoding="utf-8")
    if not out:
        raise FrontendError(f"no C++ sources under {str(root)!r}")
    return out


def parse_directory(root: str | os.PathLike) -> FactDb:
    return parse_subset(read_sources(root))


# --------------------------------------------------------------------------
# Virtual dispatch
# --------------------------------------------------------------------------


class OverrideTable(dict):
    """Method declaration key -> frozenset of overriding declaration keys.

    ``diagnostics`` lists methods that redeclare a non-virtual base method.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.diagnostics: list[str] = []


def resolve_virtuals(db: FactDb) -> OverrideTable:
    table = OverrideTable()
    for file in db.files():
        records = {n.id: n for n in db.by_type("CXXRecordDecl") if n.file == file}
        methods: dict[str, dict[str, object]] = {}
        for rid, rec in records.items():
            methods[rid] = {
                c.params[0]: c for c in db.children(rec) if c.node_type == "CXXMethodDecl"
            }

        def bases(rid):
            out = []
            b = records[rid].ref("base:")
            while b is not None and b in records:
                out.append(b)
                b = records[b].ref("base:")
            return out

        virtual: dict[str, bool] = {}

        def is_virtual(rid, name) -> bool:
            key = (rid, name)
            if key in virtual:
                return virtual[key]
            m = methods[rid][name]
            v = "virtual" in m.params or any(
                name in methods[b] and is_virtual(b, name) for b in bases(rid)
            )
            virtual[key] = v
            return v

        for rid in sorted(records, key=lambda r: records[r].ast_order):
            for name, m in methods[rid].items():
                table.setdefault(m.key, set())
                overridden = [b for b in bases(rid) if name in methods[b]]
                for b in overridden:
                    if is_virtual(b, name):
                        table.setdefault(methods[b][name].key, set()).add(m.key)
                # only the nearest redeclaration decides hiding vs overriding
                if overridden and not is_virtual(overridden[0], name):
                    b = overridden[0]
                    msg = (
                        f"{records[rid].params[1]}::{name} hides non-virtual "
                        f"{records[b].params[1]}::{name}; no dynamic dispatch"
                    )
                    if msg not in table.diagnostics:
                        table.diagnostics.append(msg)
                        log.warning(msg)
    for k in list(table):
        table[k] = frozenset(table[k])
    return table
