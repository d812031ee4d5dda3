"""CTL over finite trees of call nodes.

Atoms compare the current node's method name or receiver variable with a
string literal or with the same field of the tree root. Leaves have no
successors: AX holds and EX fails there, AF and AU need their target on
or before the leaf, EG is satisfied by a path that stays in phi until it
ends.

Two evaluators share these semantics. ``eval_naive`` is the plain
recursive definition; ``eval_early`` stops as soon as a verdict is known
and reports how many nodes it looked at, plus a witness path.
"""

from __future__ import annotations

import difflib
import fnmatch
import re
from dataclasses import dataclass, field
from typing import Any, Union

FIELDS = ("name", "var")
UNARY_TEMPORAL = ("AX", "EX", "AF", "EF", "AG", "EG")


class CtlSyntaxError(ValueError):
    def __init__(self, message: str, column: int, text: str = ""):
        super().__init__(f"column {column}: {message}")
        self.column = column
        self.text = text


# --------------------------------------------------------------------------
# Formula tree
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RootRef:
    field: str

    def __str__(self) -> str:
        return f"root.{self.field}"


@dataclass(frozen=True)
class Atom:
    lhs: str
    op: str
    rhs: Union[str, RootRef]


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Temporal:
    op: str
    arg: "Formula"


@dataclass(frozen=True)
class Until:
    quant: str
    left: "Formula"
    right: "Formula"


Formula = Union[Atom, Const, Not, And, Or, Temporal, Until]


def AF(f): return Temporal("AF", f)  # noqa: E704
def AG(f): return Temporal("AG", f)  # noqa: E704
def AX(f): return Temporal("AX", f)  # noqa: E704
def EF(f): return Temporal("EF", f)  # noqa: E704
def EG(f): return Temporal("EG", f)  # noqa: E704
def EX(f): return Temporal("EX", f)  # noqa: E704


def depth(f: Formula) -> int:
    if isinstance(f, (Atom, Const)):
        return 0
    if isinstance(f, (Not, Temporal)):
        return 1 + depth(f.arg)
    return 1 + max(depth(f.left), depth(f.right))


def literals(f: Formula) -> list[tuple[str, str]]:
    """(field, literal) pairs compared against in ``f``."""
    if isinstance(f, Atom):
        return [] if isinstance(f.rhs, RootRef) else [(f.lhs, f.rhs)]
    if isinstance(f, Const):
        return []
    if isinstance(f, (Not, Temporal)):
        return literals(f.arg)
    return literals(f.left) + literals(f.right)


# --------------------------------------------------------------------------
# Parsing and printing
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<op>==|!=|&&|\|\||!|\(|\)|\[|\]|\.)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    """,
    re.VERBOSE,
)


def _tokens(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos] == '"':
                raise CtlSyntaxError("unterminated string", pos + 1, text)
            raise CtlSyntaxError(f"unexpected character {text[pos]!r}", pos + 1, text)
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos + 1))
        pos = m.end()
    out.append(("end", "", len(text) + 1))
    return out


def _unquote(tok: str) -> str:
    return re.sub(r"\\(.)", r"\1", tok[1:-1])


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokens(text)
        self.i = 0

    def peek(self, k: int = 0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def fail(self, msg: str, tok=None):
        tok = tok or self.peek()
        found = "end of input" if tok[0] == "end" else repr(tok[1])
        raise CtlSyntaxError(f"{msg}, found {found}", tok[2], self.text)

    def expect(self, value: str):
        tok = self.peek()
        if tok[1] != value or tok[0] == "str":
            self.fail(f"expected {value!r}")
        self.i += 1
        return tok

    def parse(self) -> Formula:
        f = self.disj()
        if self.peek()[0] != "end":
            self.fail("unexpected trailing input")
        return f

    def disj(self) -> Formula:
        f = self.conj()
        while self.peek()[1] == "||" and self.peek()[0] == "op":
            self.i += 1
            f = Or(f, self.conj())
        return f

    def conj(self) -> Formula:
        f = self.unary()
        while self.peek()[1] == "&&" and self.peek()[0] == "op":
            self.i += 1
            f = And(f, self.unary())
        return f

    def unary(self) -> Formula:
        kind, val, _ = self.peek()
        if kind == "op" and val == "!":
            self.i += 1
            return Not(self.unary())
        return self.primary()

    def primary(self) -> Formula:
        kind, val, _ = tok = self.peek()
        if kind == "op" and val == "(":
            self.i += 1
            f = self.disj()
            self.expect(")")
            return f
        if kind == "ident":
            if val in UNARY_TEMPORAL and self.peek(1)[1] == "(":
                self.i += 2
                f = self.disj()
                self.expect(")")
                return Temporal(val, f)
            if val in ("A", "E") and self.peek(1)[1] == "[":
                self.i += 2
                left = self.disj()
                if self.peek() != ("ident", "U", self.peek()[2]):
                    self.fail("expected 'U'")
                self.i += 1
                right = self.disj()
                self.expect("]")
                return Until(val, left, right)
            if val in ("true", "false"):
                self.i += 1
                return Const(val == "true")
            if val in FIELDS:
                return self.atom()
        self.fail("expected a formula", tok)

    def atom(self) -> Atom:
        _, lhs, _ = self.peek()
        self.i += 1
        kind, op, _ = self.peek()
        if kind != "op" or op not in ("==", "!="):
            self.fail("expected '==' or '!='")
        self.i += 1
        kind, val, _ = tok = self.peek()
        if kind == "str":
            self.i += 1
            return Atom(lhs, op, _unquote(val))
        if kind == "ident" and val == "root":
            self.i += 1
            self.expect(".")
            kind, fld, _ = ftok = self.peek()
            if kind != "ident" or fld not in FIELDS:
                self.fail("expected 'name' or 'var' after 'root.'", ftok)
            self.i += 1
            return Atom(lhs, op, RootRef(fld))
        self.fail("expected a string literal or root.name/root.var", tok)


def parse_formula(text: str) -> Formula:
    return _Parser(text).parse()


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_formula(f: Formula) -> str:
    """Canonical text; ``parse_formula(format_formula(f)) == f``."""
    if isinstance(f, Atom):
        rhs = str(f.rhs) if isinstance(f.rhs, RootRef) else _quote(f.rhs)
        return f"{f.lhs} {f.op} {rhs}"
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, Not):
        inner = format_formula(f.arg)
        return f"!({inner})" if isinstance(f.arg, (And, Or)) else f"!{inner}"
    if isinstance(f, (And, Or)):
        sym = "&&" if isinstance(f, And) else "||"
        left = format_formula(f.left)
        right = format_formula(f.right)
        if isinstance(f, And) and isinstance(f.left, Or):
            left = f"({left})"
        if isinstance(f.right, (And, Or)):
            right = f"({right})"
        return f"{left} {sym} {right}"
    if isinstance(f, Temporal):
        return f"{f.op}({format_formula(f.arg)})"
    if isinstance(f, Until):
        left, right = (f"({format_formula(x)})" if isinstance(x, (And, Or)) else format_formula(x) for x in (f.left, f.right))
        return f"{f.quant}[{left} U {right}]"
    raise TypeError(f"not a formula: {f!r}")


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def atom_holds(a: Atom, node, root) -> bool:
    lhs = getattr(node, a.lhs)
    rhs = getattr(root, a.rhs.field) if isinstance(a.rhs, RootRef) else a.rhs
    return (lhs == rhs) == (a.op == "==")


def eval_naive(f: Formula, tree, node=None, root=None) -> bool:
    node = tree.root if node is None else node
    root = tree.root if root is None else root

    def ev(f, n) -> bool:
        if isinstance(f, Atom):
            return atom_holds(f, n, root)
        if isinstance(f, Const):
            return f.value
        if isinstance(f, Not):
            return not ev(f.arg, n)
        if isinstance(f, And):
            return ev(f.left, n) and ev(f.right, n)
        if isinstance(f, Or):
            return ev(f.left, n) or ev(f.right, n)
        succ = tree.successors(n)
        if isinstance(f, Until):
            if ev(f.right, n):
                return True
            if not ev(f.left, n) or not succ:
                return False
            q = all if f.quant == "A" else any
            return q(ev(f, s) for s in succ)
        op, arg = f.op, f.arg
        if op == "AX":
            return all(ev(arg, s) for s in succ)
        if op == "EX":
            return any(ev(arg, s) for s in succ)
        if op == "AF":
            return ev(arg, n) or (bool(succ) and all(ev(f, s) for s in succ))
        if op == "EF":
            return ev(arg, n) or any(ev(f, s) for s in succ)
        if op == "AG":
            return ev(arg, n) and all(ev(f, s) for s in succ)
        if op == "EG":
            return ev(arg, n) and (not succ or any(ev(f, s) for s in succ))
        raise TypeError(f"unknown operator {op}")

    return ev(f, node)


@dataclass
class CheckResult:
    verdict: bool
    witness: list = field(default_factory=list)
    visited: int = 0

    @property
    def holds(self) -> bool:
        return self.verdict


class _Early:
    def __init__(self, tree, root):
        self.tree = tree
        self.root = root
        self.seen: set[int] = set()
        self.memo: dict[tuple, tuple[bool, list]] = {}
        self.succ_cache: dict[int, list] = {}

    def successors(self, n):
        key = id(n)
        if key not in self.succ_cache:
            self.succ_cache[key] = list(self.tree.successors(n))
        return self.succ_cache[key]

    def ev(self, f, n) -> tuple[bool, list]:
        """(verdict, witness path starting at n)."""
        self.seen.add(id(n))
        key = (f, id(n))
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        out = self._ev(f, n)
        self.memo[key] = out
        return out

    def _ev(self, f, n):
        if isinstance(f, Atom):
            return atom_holds(f, n, self.root), [n]
        if isinstance(f, Const):
            return f.value, [n]
        if isinstance(f, Not):
            v, _ = self.ev(f.arg, n)
            return not v, [n]
        if isinstance(f, And):
            v, w = self.ev(f.left, n)
            if not v:
                return False, w
            return self.ev(f.right, n)
        if isinstance(f, Or):
            v, w = self.ev(f.left, n)
            if v:
                return True, w
            return self.ev(f.right, n)
        if isinstance(f, Until):
            v, _ = self.ev(f.right, n)
            if v:
                return True, [n]
            v, _ = self.ev(f.left, n)
            succ = self.successors(n) if v else []
            if not succ:
                return False, [n]
            return self._over(f, succ, f.quant == "A", n)
        op, arg = f.op, f.arg
        if op in ("AX", "EX"):
            return self._over(arg, self.successors(n), op == "AX", n)
        if op == "AF":
            v, _ = self.ev(arg, n)
            if v:
                return True, [n]
            succ = self.successors(n)
            if not succ:
                return False, [n]
            return self._over(f, succ, True, n)
        if op == "EF":
            v, _ = self.ev(arg, n)
            if v:
                return True, [n]
            return self._over(f, self.successors(n), False, n)
        if op == "AG":
            v, _ = self.ev(arg, n)
            if not v:
                return False, [n]
            return self._over(f, self.successors(n), True, n)
        if op == "EG":
            v, _ = self.ev(arg, n)
            if not v:
                return False, [n]
            succ = self.successors(n)
            if not succ:
                return True, [n]
            return self._over(f, succ, False, n)
        raise TypeError(f"unknown operator {op}")

    def _over(self, f, succ, universal: bool, n):
        """All/any of ``f`` over successors, stopping at the first decisive one.

        Universal failure and existential success extend the witness with
        the deciding successor's path.
        """
        for s in succ:
            v, w = self.ev(f, s)
            if v != universal:
                return v, [n] + w
        return universal, [n]


def eval_early(f: Formula, tree, node=None, root=None) -> CheckResult:
    node = tree.root if node is None else node
    root = tree.root if root is None else root
    e = _Early(tree, root)
    v, w = e.ev(f, node)
    return CheckResult(v, w, len(e.seen))


# --------------------------------------------------------------------------
# Rules and seed selectors
# --------------------------------------------------------------------------

SELECTOR_FIELDS = ("callee", "caller", "var")

_CLAUSE = re.compile(r'\s*(callee|caller|var)\s*(==|!=)\s*"((?:[^"\\]|\\.)*)"\s*')


class SelectorError(ValueError):
    pass


@dataclass(frozen=True)
class Selector:
    """Conjunction of glob tests on call-edge fields."""

    clauses: tuple[tuple[str, str, str], ...]

    def matches(self, edge) -> bool:
        for fld, op, pat in self.clauses:
            if fld == "callee":
                value = edge.callee.name
            elif fld == "caller":
                value = edge.caller.name
            else:
                value = edge.var
            if fnmatch.fnmatchcase(value, pat) != (op == "=="):
                return False
        return True

    def unknown_names(self, names) -> list[tuple[str, list[str]]]:
        """Literal method patterns that match nothing but resemble something."""
        names = sorted(set(names))
        out = []
        for fld, op, pat in self.clauses:
            if fld == "var" or op != "==" or any(ch in pat for ch in "*?["):
                continue
            if pat in names:
                continue
            near = difflib.get_close_matches(pat, names, n=3, cutoff=0.6)
            if near:
                out.append((pat, near))
        return out

    def __str__(self) -> str:
        return " && ".join(f"{f} {op} {_quote(p)}" for f, op, p in self.clauses)


def parse_selector(text: str) -> Selector:
    clauses = []
    for part in _split_top(text, "&&"):
        m = _CLAUSE.fullmatch(part)
        if not m:
            raise SelectorError(f"bad selector clause {part.strip()!r}; expected callee|caller|var == \"pattern\"")
        clauses.append((m.group(1), m.group(2), _unquote('"' + m.group(3) + '"')))
    if not clauses:
        raise SelectorError("empty selector")
    return Selector(tuple(clauses))


def _split_top(text: str, sep: str) -> list[str]:
    """Split on ``sep`` outside string literals."""
    parts, buf, i, in_str = [], [], 0, False
    while i < len(text):
        ch = text[i]
        if in_str:
            buf.append(ch)
            if ch == "\\" and i + 1 < len(text):
                buf.append(text[i + 1])
                i += 1
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
            buf.append(ch)
        elif text.startswith(sep, i):
            parts.append("".join(buf))
            buf = []
            i += len(sep)
            continue
        else:
            buf.append(ch)
        i += 1
    parts.append("".join(buf))
    return parts


@dataclass(frozen=True)
class Rule:
    name: str
    selector: Selector
    formula: Formula
    after_seed: bool = False
    message: str = "property violated"
    builtin: bool = False

    @property
    def effective(self) -> Formula:
        """Formula evaluated at the tree root."""
        return Temporal("AX", self.formula) if self.after_seed else self.formula


ENTER = "Semaphore::enter"
LEAVE = "Semaphore::leave"


def builtin_rules() -> list[Rule]:
    seeds = parse_selector(f'callee == "{ENTER}"')
    left = f'name == "{LEAVE}" && var == root.var'
    return [
        Rule(
            "sema-never-left",
            seeds,
            parse_formula(f"AF({left})"),
            message="semaphore '{var}' never left",
            builtin=True,
        ),
        Rule(
            "sema-double-enter",
            seeds,
            parse_formula(f'A[!(name == "{ENTER}" && var == root.var) U ({left})]'),
            after_seed=True,
            message="semaphore '{var}' not left before it was entered again or the flow ended",
            builtin=True,
        ),
    ]


def _split_colons(line: str) -> list[str]:
    """Split on single ':' outside strings, leaving '::' alone."""
    parts, buf, i, in_str = [], [], 0, False
    while i < len(line):
        ch = line[i]
        if in_str:
            buf.append(ch)
            if ch == "\\" and i + 1 < len(line):
                buf.append(line[i + 1])
                i += 1
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
            buf.append(ch)
        elif ch == ":" and line.startswith("::", i):
            buf.append("::")
            i += 2
            continue
        elif ch == ":" and len(parts) < 2:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    parts.append("".join(buf))
    return [p.strip() for p in parts]


class RuleFileError(ValueError):
    pass


def parse_rules(text: str, source: str = "<rules>") -> list[Rule]:
    """One ``name: selector: formula`` per line; ``#`` starts a comment line."""
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = _split_colons(line)
        if len(parts) != 3 or not all(parts):
            raise RuleFileError(f"{source}:{lineno}: expected 'name: selector: formula'")
        name, sel, formula = parts
        try:
            rules.append(Rule(name, parse_selector(sel), parse_formula(formula)))
        except (SelectorError, CtlSyntaxError) as exc:
            raise RuleFileError(f"{source}:{lineno}: {exc}") from exc
    return rules


def rule_to_json(rule: Rule) -> dict[str, Any]:
    return {
        "name": rule.name,
        "selector": str(rule.selector),
        "formula": format_formula(rule.formula),
        "after_seed": rule.after_seed,
    }
