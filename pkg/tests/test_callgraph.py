import json

import pytest
from hypothesis import given, strategies as st

from estcheck.callgraph import (
    CallGraphError,
    CondLabel,
    Condition,
    UNCONDITIONAL,
    build_cg,
    cg_to_dot,
    cg_to_json,
    cg_variants,
    detect_conditions,
    detect_method_decls,
)
from estcheck.frontend import parse_directory, parse_subset, resolve_virtuals
from helpers import FIXTURES, GOLDEN


def cg_of(name):
    return build_cg(parse_directory(FIXTURES / name))


def edges(cg):
    return [(e.caller.name, e.callee.name, e.loc.short(), e.var, str(e.cond)) for e in cg.edges]


def test_three_method_edges():
    cg = cg_of("test_src")
    assert set(cg.methods) == {"Test::methodA", "Test::methodB", "Test::methodC"}
    assert edges(cg) == [
        ("Test::methodA", "Test::methodC", "3:3", "this", "{}"),
        ("Test::methodA", "Test::methodB", "4:11", "this", "{(test.cpp#13,0)}"),
        ("Test::methodB", "Test::methodC", "7:3", "this", "{}"),
    ]


def test_three_method_dot_golden():
    assert cg_to_dot(cg_of("test_src")) == (GOLDEN / "test_class_cg.dot").read_text()


def test_json_lists_every_edge():
    data = json.loads(cg_to_json(cg_of("test_src")))
    assert len(data["edges"]) == 3
    assert data["edges"][1]["cond"] == [[["test.cpp#13", 0]]]


def test_method_decls_are_definitions_only():
    db = parse_directory(FIXTURES / "sema1")
    names = sorted(m.name for m in detect_method_decls(db))
    assert names == [f"Test::method{c}" for c in "CDEFG"]


def test_external_callees():
    cg = cg_of("sema1")
    assert cg.methods["Semaphore::enter"].external
    assert not cg.methods["Test::methodE"].external
    (enter,) = [e for e in cg.edges if e.callee.name == "Semaphore::enter"]
    assert enter.var == "sema" and enter.loc.short() == "11:4"


SRC = """
class K {
public:
  void m() {
    if (x) { a(); } else { b(); }
    while (x) { if (y) a(); }
    do { b(); } while (x);
    for (; x; a()) { b(); }
    x ? a() : b();
    x || a();
    c();
  }
  void a() { }
  void b() { }
  void c() { }
private:
  bool x;
  bool y;
};
"""


def test_condition_rules():
    cg = build_cg(parse_subset({"k.cpp": SRC}))
    got = [(e.callee.name.split("::")[1], e.loc.line, e.cond) for e in cg.edges]
    by_line = {}
    for callee, line, cond in got:
        by_line.setdefault(line, []).append((callee, cond))
    kinds = {cid: info.kind for cid, info in cg.conditions.items()}

    def shape(cond):
        return sorted(sorted((kinds[c.cond_id], c.branch) for c in conj) for conj in cond.dnf)

    # if/else arms are branches 0 and 1 of one condition
    (a, ca), (b, cb) = by_line[5]
    assert shape(ca) == [[("if", 0)]] and shape(cb) == [[("if", 1)]]
    assert {c.cond_id for c in ca.conditions()} == {c.cond_id for c in cb.conditions()}
    # nested: the inner if composes with the loop
    (_, nested), = by_line[6]
    assert shape(nested) == [[("if", 0), ("while", 0)]]
    # the do body runs at least once
    assert by_line[7] == [("b", UNCONDITIONAL)]
    # for body and increment both depend on the loop
    assert sorted(shape(c) for _, c in by_line[8]) == [[[("for", 0)]], [[("for", 0)]]]
    assert sorted(shape(c) for _, c in by_line[9]) == [[[("?:", 0)]], [[("?:", 1)]]]
    assert [shape(c) for _, c in by_line[10]] == [[[("||", 0)]]]
    assert by_line[11] == [("c", UNCONDITIONAL)]


def test_detect_conditions_maps_subtrees():
    db = parse_subset({"k.cpp": SRC})
    conds = detect_conditions(db)
    assert all(not label.unconditional for label in conds.values())
    assert len({c.cond_id for label in conds.values() for c in label.conditions()}) == 6


def test_returns_recorded():
    src = "class K { public: void m() { if (x) return; a(); } void a() { } bool x; };"
    cg = build_cg(parse_subset({"r.cpp": src}))
    (ret,) = cg.returns["K::m"]
    assert ret.cond.conditions() and cg.conditions[ret.ret_id].kind == "return"


def test_definition_without_class_is_an_error():
    from estcheck.facts import load_facts

    text = (
        "node('f', 0, 'tu', none, 'TranslationUnitDecl', '<f:1:1>', []).\n"
        "node('f', 0, 'm', 'tu', 'CXXMethodDecl', '<line:1:1>', ['lonely', 'void (void)']).\n"
        "node('f', 0, 'b', 'm', 'CompoundStmt', '<line:1:10>', []).\n"
    )
    with pytest.raises(CallGraphError, match="no enclosing class"):
        build_cg(load_facts(text))


def test_variants_cartesian_product():
    db = parse_directory(FIXTURES / "virtual")
    vs = list(cg_variants(build_cg(db), resolve_virtuals(db)))
    assert len(vs) == 6
    callees = [tuple(e.callee.name for e in v.edges) for v in vs]
    assert callees[0] == ("Shape::draw", "Shape::resize")
    assert len(set(callees)) == 6


def test_no_virtuals_single_variant():
    db = parse_directory(FIXTURES / "sema1")
    assert len(list(cg_variants(build_cg(db), resolve_virtuals(db)))) == 1


# CondLabel algebra

c = Condition


def test_label_absorption_and_str():
    lab = CondLabel([[c("1", 0)], [c("1", 0), c("2", 0)]])
    assert str(lab) == "{(1,0)}"
    assert str(UNCONDITIONAL) == "{}"
    assert str(CondLabel([[c("2", 0)], [c("4", 0)]])) == "{(2,0)} | {(4,0)}"


def test_conjunction_drops_inconsistent():
    a = CondLabel.of(c("1", 0))
    b = CondLabel.of(c("1", 1))
    assert a.conj(b) is None
    both = CondLabel([[c("1", 0)], [c("1", 1)]]).conj(a)
    assert both == a


def test_holds_needs_whole_conjunct():
    lab = CondLabel.of(c("2", 0), c("3", 0))
    assert not lab.holds({c("2", 0)})
    assert lab.holds({c("2", 0), c("3", 0), c("9", 1)})
    assert UNCONDITIONAL.holds(set())


conds = st.builds(Condition, st.sampled_from("1234"), st.integers(0, 1))
conjs = st.frozensets(conds, min_size=1, max_size=3).filter(lambda k: len({x.cond_id for x in k}) == len(k))
labels = st.lists(conjs, min_size=1, max_size=3).map(CondLabel)
choices = st.dictionaries(st.sampled_from("1234"), st.integers(0, 1)).map(
    lambda d: {Condition(k, v) for k, v in d.items()}
)


@given(labels, labels, choices)
def test_conj_is_pointwise_and(x, y, chosen):
    z = x.conj(y)
    expected = x.holds(chosen) and y.holds(chosen)
    assert (z is not None and z.holds(chosen)) == expected


@given(labels)
def test_label_json_round_trip(x):
    assert CondLabel.from_json(x.to_json()) == x
