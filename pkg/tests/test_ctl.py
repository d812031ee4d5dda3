import random

import pytest

from estcheck.callgraph import build_cg
from estcheck.ctl import (
    AF,
    AG,
    AX,
    EF,
    EG,
    EX,
    And,
    Atom,
    Const,
    CtlSyntaxError,
    Not,
    Or,
    RootRef,
    RuleFileError,
    SelectorError,
    Until,
    builtin_rules,
    depth,
    eval_early,
    eval_naive,
    format_formula,
    literals,
    parse_formula,
    parse_rules,
    parse_selector,
)
from estcheck.est import build_est
from estcheck.frontend import parse_directory, parse_subset
from helpers import FIXTURES, T, build_tree, random_formula, random_tree

LEAVE = Atom("name", "==", "Semaphore::leave")
ENTER = Atom("name", "==", "Semaphore::enter")
SAME = Atom("var", "==", RootRef("var"))


def test_parse_never_left_proposition():
    f = parse_formula('AF(name == "Semaphore::leave" && var == root.var)')
    assert f == AF(And(LEAVE, SAME))


def test_parse_double_enter_proposition():
    text = (
        'A[!(name == "Semaphore::enter" && var == root.var) '
        'U (name == "Semaphore::leave" && var == root.var)]'
    )
    assert parse_formula(text) == Until("A", Not(And(ENTER, SAME)), And(LEAVE, SAME))


def test_unclosed_call_reports_column():
    with pytest.raises(CtlSyntaxError) as exc:
        parse_formula("AF(")
    assert exc.value.column == 4


@pytest.mark.parametrize(
    "text",
    ['name = "x"', "AF name", 'A[name == "x"]', 'name == x', 'AF(name == "x"))', "", 'size == "3"'],
)
def test_syntax_errors(text):
    with pytest.raises(CtlSyntaxError):
        parse_formula(text)


def test_precedence_and_constants():
    f = parse_formula('!name == "a" || var == "v" && true')
    assert f == Or(Not(Atom("name", "==", "a")), And(Atom("var", "==", "v"), Const(True)))
    assert parse_formula("AG(true)") == AG(Const(True))


def test_random_formulas_round_trip():
    rng = random.Random(1)
    for _ in range(2000):
        f = random_formula(rng)
        assert parse_formula(format_formula(f)) == f


def test_escaped_literal_round_trip():
    f = EF(Atom("name", "==", 'odd "name" \\ here'))
    assert parse_formula(format_formula(f)) == f


def test_depth_and_literals():
    f = AF(And(LEAVE, SAME))
    assert depth(f) == 2
    assert literals(f) == [("name", "Semaphore::leave")]


# Finite-tree semantics at leaves


LEAF = build_tree(T("r"))
X = Atom("name", "==", "r")


@pytest.mark.parametrize(
    "formula, expected",
    [
        (AX(Const(False)), True),
        (EX(Const(True)), False),
        (AF(Const(False)), False),
        (EG(X), True),
        (AG(X), True),
        (Until("A", Const(True), Const(False)), False),
        (AG(Const(True)), True),
    ],
)
def test_leaf_semantics(formula, expected):
    assert eval_naive(formula, LEAF) is expected
    assert eval_early(formula, LEAF).verdict is expected


def test_root_reference_compares_with_root():
    tree = build_tree(T("r", T("a", var="x"), T("b", var="y"), var="x"))
    a, b = tree.successors(tree.root)
    assert eval_naive(SAME, tree, a)
    assert not eval_naive(SAME, tree, b)


# Early evaluation against the naive oracle


def is_path(tree, nodes):
    return all(b in tree.successors(a) for a, b in zip(nodes, nodes[1:]))


def test_early_matches_naive_on_random_instances():
    rng = random.Random(2024)
    for _ in range(1500):
        tree = random_tree(rng, labels=False)
        f = random_formula(rng)
        res = eval_early(f, tree)
        assert res.verdict == eval_naive(f, tree), format_formula(f)
        assert 1 <= res.visited <= len(tree)
        assert res.witness[0] is tree.root and is_path(tree, res.witness)


def test_dualities_on_random_instances():
    rng = random.Random(77)
    for _ in range(1000):
        tree = random_tree(rng, labels=False)
        f = random_formula(rng, depth=3)
        assert eval_naive(AG(f), tree) == (not eval_naive(EF(Not(f)), tree))
        assert eval_naive(AF(f), tree) == (not eval_naive(EG(Not(f)), tree))
        assert eval_naive(AX(f), tree) == (not eval_naive(EX(Not(f)), tree))


def test_counterexample_path_ends_where_af_fails():
    tree = build_tree(T("r", T("a", T("X")), T("b", T("c"))))
    res = eval_early(AF(Atom("name", "==", "X")), tree)
    assert not res.verdict
    assert [n.name for n in res.witness] == ["r", "b", "c"]


def test_af_stops_at_first_leave_per_path():
    src = """
class Semaphore { public: void enter(); void leave(); };
class K {
public:
  void m() {
    s.enter();
    s.leave();
    tidy();
  }
  void tidy() { }
private:
  Semaphore s;
};
"""
    cg = build_cg(parse_subset({"k.cpp": src}))
    (seed,) = [e for e in cg.edges if e.callee.name == "Semaphore::enter"]
    tree = build_est(cg, seed)
    assert len(tree) == 3
    never_left = builtin_rules()[0].effective
    res = eval_early(never_left, tree)
    assert eval_naive(never_left, tree) and res.verdict
    # the seed, then its leave; the call to tidy is never read
    assert res.visited == 2


def test_builtin_verdicts_on_semaphore_flows():
    cg = build_cg(parse_directory(FIXTURES / "sema1"))
    (seed,) = [e for e in cg.edges if e.caller.name == "Test::methodE" and e.callee.name == "Semaphore::enter"]
    tree = build_est(cg, seed)
    never_left = builtin_rules()[0].effective
    c_branch, d_branch = tree.successors(tree.successors(tree.root)[0])
    assert c_branch.name == "Test::methodC" and d_branch.name == "Test::methodD"
    # evaluated from the seed with only one caller branch present
    assert eval_naive(never_left, _only(tree, c_branch))
    assert not eval_naive(never_left, _only(tree, d_branch))


def _only(tree, keep):
    """Copy of ``tree`` with every sibling of ``keep`` removed."""
    from estcheck.est import Est

    parents = tree.parent_map()
    children = dict(tree.children)
    children[parents[keep]] = [keep]
    return Est(tree.root, children)


# Selectors and rule files


class Edge:
    def __init__(self, caller, callee, var):
        self.caller = type("M", (), {"name": caller})
        self.callee = type("M", (), {"name": callee})
        self.var = var


def test_selector_globs_and_negation():
    sel = parse_selector('callee == "Semaphore::*" && var != "tmp"')
    assert sel.matches(Edge("K::m", "Semaphore::enter", "s"))
    assert not sel.matches(Edge("K::m", "Semaphore::enter", "tmp"))
    assert not sel.matches(Edge("K::m", "Mutex::lock", "s"))


def test_selector_suggests_close_names():
    sel = parse_selector('callee == "Semaphore::entr"')
    assert sel.unknown_names(["Semaphore::enter", "Test::m"]) == [("Semaphore::entr", ["Semaphore::enter"])]
    assert parse_selector('callee == "Sema*"').unknown_names(["X"]) == []


@pytest.mark.parametrize("text", ["", "callee = \"x\"", "name == \"x\"", 'callee == "x" &&'])
def test_bad_selectors(text):
    with pytest.raises(SelectorError):
        parse_selector(text)


def test_rule_file_splits_on_single_colons_only():
    text = """
# comment
lock-released: callee == "Mutex::lock": AF(name == "Mutex::unlock" && var == root.var)
"""
    (rule,) = parse_rules(text)
    assert rule.name == "lock-released"
    assert rule.selector.clauses == (("callee", "==", "Mutex::lock"),)
    assert rule.formula == AF(And(Atom("name", "==", "Mutex::unlock"), SAME))
    assert not rule.after_seed


def test_rule_file_errors_name_the_line():
    with pytest.raises(RuleFileError, match=":2:"):
        parse_rules('ok: callee == "a": AG(true)\nbroken: callee == "a": AF(')
    with pytest.raises(RuleFileError, match=":1:"):
        parse_rules("only-two: parts")


def test_builtin_rules_shape():
    never_left, double_enter = builtin_rules()
    assert never_left.name == "sema-never-left" and not never_left.after_seed
    assert double_enter.name == "sema-double-enter" and double_enter.after_seed
    assert double_enter.effective == AX(double_enter.formula)
