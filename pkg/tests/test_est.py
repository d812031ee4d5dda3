import random
from collections import Counter

import pytest

from estcheck.callgraph import UNCONDITIONAL, CallGraph, CgEdge, CgMethod, build_cg
from estcheck.est import EstBudgetExceeded, EstError, build_est, est_paths, tree_to_dot, tree_to_json
from estcheck.facts import SourceLoc
from estcheck.frontend import parse_directory, parse_subset
from helpers import FIXTURES, T, build_tree


def cg_of(name):
    return build_cg(parse_directory(FIXTURES / name))


def seed(cg, caller, callee, line=None):
    found = [e for e in cg.edges if e.caller.name == caller and e.callee.name == callee]
    if line is not None:
        found = [e for e in found if e.loc.line == line]
    (e,) = found
    return e


def shape(tree, node=None):
    node = node or tree.root
    return (node.name, node.kind, node.loc.short(), [shape(tree, c) for c in tree.successors(node)])


def test_conditional_call_chain():
    cg = cg_of("test_src")
    tree = build_est(cg, seed(cg, "Test::methodA", "Test::methodC"))
    assert shape(tree) == (
        "Test::methodA", "root", "3:3", [
            ("Test::methodB", "child", "4:11", [
                ("Test::methodC", "child", "7:3", []),
            ]),
        ],
    )
    b = tree.successors(tree.root)[0]
    assert str(b.cond) == "{(test.cpp#13,0)}"


def test_seed_in_callee_returns_to_caller():
    cg = cg_of("test_src")
    tree = build_est(cg, seed(cg, "Test::methodB", "Test::methodC"))
    assert shape(tree) == ("Test::methodB", "root", "7:3", [("Test::methodA", "parent", "4:11", [])])


def test_single_node_tree():
    cg = cg_of("sema5")
    tree = build_est(cg, seed(cg, "SemaTest::methodA", "Semaphore::leave"))
    assert len(tree) == 1
    assert list(est_paths(tree)) == [[tree.root]]


def test_seed_must_belong_to_graph():
    cg = cg_of("test_src")
    stranger = CgEdge(CgMethod("X", ("f", "1")), CgMethod("Y", ("f", "2")), SourceLoc("f", 1, 1), "this", UNCONDITIONAL)
    with pytest.raises(EstError):
        build_est(cg, stranger)


def test_parents_branch_in_name_order():
    cg = cg_of("sema1")
    tree = build_est(cg, seed(cg, "Test::methodE", "Semaphore::enter"))
    assert shape(tree) == (
        "Test::methodE", "root", "11:4", [
            ("Test::methodG", "child", "12:4", [
                ("Test::methodC", "parent", "3:4", [("Semaphore::leave", "child", "4:4", [])]),
                ("Test::methodD", "parent", "7:4", []),
            ]),
        ],
    )


def test_ids_are_paths_to_root():
    cg = cg_of("sema1")
    tree = build_est(cg, seed(cg, "Test::methodE", "Semaphore::enter"))
    for path in est_paths(tree):
        for i, n in enumerate(path):
            assert n.id == tuple(p.name for p in reversed(path[: i + 1]))
        assert path[0].kind == "root" and all(n.kind != "root" for n in path[1:])


def test_paths_left_to_right():
    tree = build_tree(T("r", T("a", T("b"), T("c")), T("d")))
    assert [[n.name for n in p] for p in est_paths(tree)] == [["r", "a", "b"], ["r", "a", "c"], ["r", "d"]]


def test_seed_branch_is_assumed():
    src = """
class K {
public:
  void m() {
    if (x) {
      s.enter();
      s.leave();
    }
  }
private:
  bool x;
  S s;
};
class S { public: void enter(); void leave(); };
"""
    # S must be declared before use; reorder
    src = src.replace("class K", "class S { public: void enter(); void leave(); };\nclass K", 1).rsplit("class S", 1)[0]
    cg = build_cg(parse_subset({"k.cpp": src}))
    tree = build_est(cg, seed(cg, "K::m", "S::enter"))
    (leave,) = tree.successors(tree.root)
    assert leave.name == "S::leave" and leave.cond.unconditional


def test_return_gates_later_calls():
    src = """
class K {
public:
  void m() {
    a();
    if (x) return;
    b();
    return;
    c();
  }
  void a() { }
  void b() { }
  void c() { }
private:
  bool x;
};
"""
    cg = build_cg(parse_subset({"k.cpp": src}))
    tree = build_est(cg, seed(cg, "K::m", "K::a"))
    (b,) = tree.successors(tree.root)
    assert b.name == "K::b"
    (conj,) = b.cond.dnf
    (cond,) = conj
    assert cg.conditions[cond.cond_id].kind == "return"
    # the unconditional return removes c entirely
    assert tree.successors(b) == []


def test_recursion_cut_direct():
    cg = cg_of("recursion_direct")
    tree = build_est(cg, seed(cg, "Walker::step", "Semaphore::enter"))
    for path in est_paths(tree):
        counts = Counter(n.edge.call_id for n in path)
        assert max(counts.values()) <= 2


def test_recursion_cut_mutual():
    cg = cg_of("recursion_mutual")
    tree = build_est(cg, seed(cg, "Ring::first", "Semaphore::enter"))
    assert len(tree) < 50
    for path in est_paths(tree):
        counts = Counter(n.edge.call_id for n in path)
        assert max(counts.values()) <= 2


def test_helper_called_twice_runs_twice():
    src = """
class K {
public:
  void m() {
    h();
    h();
  }
  void h() { g(); }
  void g() { }
};
"""
    cg = build_cg(parse_subset({"k.cpp": src}))
    tree = build_est(cg, seed(cg, "K::m", "K::h", line=5))
    (path,) = list(est_paths(tree))
    # the seed h runs g, then the second h runs g again
    assert [n.name for n in path] == ["K::m", "K::g", "K::h", "K::g"]


def test_budget():
    cg = cg_of("sema1")
    with pytest.raises(EstBudgetExceeded):
        build_est(cg, seed(cg, "Test::methodE", "Semaphore::enter"), budget=2)


def test_dot_and_json_render():
    cg = cg_of("test_src")
    tree = build_est(cg, seed(cg, "Test::methodA", "Test::methodC"))
    dot = tree_to_dot(tree)
    assert dot.count("->") == 2
    assert "Test::methodB\\n4:11\\nthis\\nc\\n{(test.cpp#13,0)}" in dot
    assert '"kind": "root"' in tree_to_json(tree)


# Oracle: on acyclic graphs whose seed caller has no callers the tree is a
# single path equal to a direct depth-first walk of the call graph, where an
# edge already taken twice on the walk is not taken again.


def random_acyclic_cg(rng):
    n = rng.randint(2, 7)
    methods = [CgMethod(f"M{i}", ("f", str(i))) for i in range(n)]
    edges = []
    line = 0
    for i, m in enumerate(methods):
        for _ in range(rng.randint(0, 3)):
            if i + 1 >= n:
                break
            line += 1
            callee = methods[rng.randint(i + 1, n - 1)]
            edges.append(CgEdge(m, callee, SourceLoc("f", line, 1), "this", UNCONDITIONAL, f"call{line}"))
    return CallGraph({m.name: m for m in methods}, tuple(edges))


def walk(cg, method, taken):
    out = []
    for e in cg.out_edges(method):
        if taken[e.call_id] >= 2:
            continue
        taken[e.call_id] += 1
        out.append(e.callee.name)
        out.extend(walk(cg, e.callee.name, taken))
    return out


def test_acyclic_oracle():
    rng = random.Random(7)
    checked = 0
    while checked < 200:
        cg = random_acyclic_cg(rng)
        seeds = [e for e in cg.edges if e.caller.name == "M0"]
        if not seeds:
            continue
        s = rng.choice(seeds)
        tree = build_est(cg, s)
        (path,) = list(est_paths(tree))
        taken = Counter({s.call_id: 1})
        expected = ["M0"] + walk(cg, s.callee.name, taken)
        for e in cg.out_edges("M0"):
            if e.loc.start > s.loc.start and taken[e.call_id] < 2:
                taken[e.call_id] += 1
                expected += [e.callee.name] + walk(cg, e.callee.name, taken)
        assert [n.name for n in path] == expected
        checked += 1
