"""Rule checking over all flows selected by condition assignments.

For each call-graph variant, seed call and rule, the tree is unfolded once.
Flows are then explored without materializing them: the evaluator walks a
lazy view that decides node membership on demand. When membership depends
on a condition that has not been fixed yet, the run stops and is repeated
once per option of that condition (absent first). Conditions that the
evaluator never needs are never branched on, so the number of runs can be
far below the number of assignments.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .callgraph import CallGraph, CgEdge, Condition, build_cg, cg_variants, edge_to_json, loc_to_json
from .ctl import Rule, eval_early
from .est import DEFAULT_BUDGET, Est, EstBudgetExceeded, EstNode, build_est, node_to_json
from .facts import FactDb
from .frontend import resolve_virtuals
from .nest import Assignment, assignment_count, branch_options, derive_nest


class CheckError(ValueError):
    pass


class _Undecided(Exception):
    def __init__(self, cond_id: str):
        self.cond_id = cond_id


class LazyNest:
    """NEST view over partially decided conditions.

    ``decided`` maps cond ids to a branch or None (absent). Asking for the
    successors of a node whose subtree membership hinges on an undecided id
    raises ``_Undecided``.
    """

    def __init__(self, est: Est, decided: dict[str, int | None], budget: int = DEFAULT_BUDGET):
        self.est = est
        self.root = est.root
        self.decided = decided
        self.budget = budget
        self.expanded = 0

    def _keep(self, node: EstNode) -> bool:
        if node.cond.unconditional:
            return True
        undecided = None
        for conj in node.cond.conjuncts:
            open_ids = [c.cond_id for c in sorted(conj) if c.cond_id not in self.decided]
            if any(c.cond_id in self.decided and self.decided[c.cond_id] != c.branch for c in conj):
                continue
            if not open_ids:
                return True
            undecided = undecided or open_ids[0]
        if undecided is not None:
            raise _Undecided(undecided)
        return False

    def successors(self, node: EstNode) -> list[EstNode]:
        out = []
        stack = list(reversed(self.est.successors(node)))
        while stack:
            n = stack.pop()
            self.expanded += 1
            if self.expanded > self.budget:
                raise EstBudgetExceeded(self.budget)
            if self._keep(n):
                out.append(n)
            else:
                stack.extend(reversed(self.est.successors(n)))
        return out


def _chosen(decided: dict[str, int | None]) -> Assignment:
    return Assignment(frozenset(Condition(k, b) for k, b in decided.items() if b is not None))


@dataclass
class Violation:
    rule: str
    seed: CgEdge
    assignment: Assignment
    decided: tuple[str, ...]
    witness: list[EstNode]
    variant: int
    message: str
    ends_at_leaf: bool
    assumptions: list[tuple[Condition, str, object]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "variant": self.variant,
            "seed": edge_to_json(self.seed),
            "assignment": self.assignment.to_json(),
            "decided": list(self.decided),
            "witness": [node_to_json(n) for n in self.witness],
            "message": self.message,
        }


@dataclass
class Inconclusive:
    rule: str
    seed: CgEdge
    variant: int
    reason: str

    def to_json(self) -> dict:
        return {"rule": self.rule, "variant": self.variant, "seed": edge_to_json(self.seed), "reason": self.reason}


@dataclass
class RuleReport:
    rule: Rule
    seeds: int = 0
    violations: list[Violation] = field(default_factory=list)
    nests_examined: int = 0
    nests_pruned: int = 0
    assignments_skipped: int = 0
    inconclusive: list[Inconclusive] = field(default_factory=list)

    def merge(self, other: "RuleReport") -> None:
        self.seeds += other.seeds
        self.violations.extend(other.violations)
        self.nests_examined += other.nests_examined
        self.nests_pruned += other.nests_pruned
        self.assignments_skipped += other.assignments_skipped
        self.inconclusive.extend(other.inconclusive)


@dataclass
class CheckReport:
    rules: list[RuleReport]
    variants: int = 1

    @property
    def violations(self) -> list[Violation]:
        return [v for r in self.rules for v in r.violations]

    @property
    def inconclusive(self) -> list[Inconclusive]:
        return [i for r in self.rules for i in r.inconclusive]

    def exit_code(self) -> int:
        if self.violations:
            return 1
        return 2 if self.inconclusive else 0

    def to_json(self) -> str:
        from .ctl import rule_to_json

        data = {
            "variants": self.variants,
            "rules": [
                {
                    **rule_to_json(r.rule),
                    "seeds": r.seeds,
                    "nests_examined": r.nests_examined,
                    "nests_pruned": r.nests_pruned,
                    "assignments_skipped": r.assignments_skipped,
                    "violations": [v.to_json() for v in r.violations],
                    "inconclusive": [i.to_json() for i in r.inconclusive],
                }
                for r in self.rules
            ],
            "summary": {"violations": len(self.violations), "inconclusive": len(self.inconclusive)},
        }
        return json.dumps(data, indent=2) + "\n"

    def to_text(self) -> str:
        out = []
        for r in self.rules:
            out.append(
                f"{r.rule.name}: {len(r.violations)} violation(s), {r.seeds} seed(s), "
                f"{r.nests_examined} NEST(s) examined, {r.nests_pruned} pruned, "
                f"{r.assignments_skipped} assignment(s) skipped"
            )
            for i in r.inconclusive:
                out.append(f"  inconclusive: {i.seed} ({i.reason})")
        for v in self.violations:
            out.append("")
            out.append(explain(v))
        return "\n".join(out) + "\n"


def select_seeds(cg: CallGraph, rule: Rule) -> list[CgEdge]:
    return [e for e in cg.edges if rule.selector.matches(e)]


def validate_rules(cg: CallGraph, rules: Iterable[Rule]) -> None:
    """Reject user selectors naming a method that does not exist when a
    similar name does (likely a typo)."""
    names = list(cg.methods)
    problems = []
    for rule in rules:
        if rule.builtin:
            continue
        for pat, near in rule.selector.unknown_names(names):
            problems.append(f"rule {rule.name}: unknown method {pat!r}; did you mean {', '.join(near)}?")
    if problems:
        raise CheckError("\n".join(problems))


def _message(rule: Rule, root: EstNode) -> str:
    try:
        return rule.message.format(var=root.var, name=root.name)
    except (KeyError, IndexError):
        return rule.message


def check_seed(cg: CallGraph, seed: CgEdge, rule: Rule, variant: int = 0, budget: int = DEFAULT_BUDGET) -> RuleReport:
    """Explore every flow of one seed's tree against one rule."""
    report = RuleReport(rule, seeds=1)
    try:
        est = build_est(cg, seed, budget)
    except EstBudgetExceeded as exc:
        report.inconclusive.append(Inconclusive(rule.name, seed, variant, str(exc)))
        return report
    options = branch_options(est)
    formula = rule.effective
    runs = 0
    pending: list[dict[str, int | None]] = [{}]
    try:
        while pending:
            decided = pending.pop()
            view = LazyNest(est, decided, budget)
            try:
                res = eval_early(formula, view)
            except _Undecided as u:
                for opt in reversed([None] + options[u.cond_id]):
                    pending.append({**decided, u.cond_id: opt})
                continue
            runs += 1
            chosen = _chosen(decided)
            if res.visited < len(derive_nest(est, chosen)):
                report.nests_pruned += 1
            else:
                report.nests_examined += 1
            if not res.verdict:
                report.violations.append(
                    Violation(
                        rule.name,
                        seed,
                        chosen,
                        tuple(sorted(decided)),
                        res.witness,
                        variant,
                        _message(rule, est.root),
                        _is_leaf(view, res.witness[-1]),
                        [(c, *_cond_info(cg, c)) for c in chosen],
                    )
                )
    except (EstBudgetExceeded, RecursionError) as exc:
        report.inconclusive.append(Inconclusive(rule.name, seed, variant, str(exc) or type(exc).__name__))
        return report
    report.assignments_skipped = assignment_count(est) - runs
    return report


def _is_leaf(view: LazyNest, node: EstNode) -> bool:
    """Leaf in this flow; False when that depends on undecided conditions."""
    try:
        return not view.successors(node)
    except _Undecided:
        return False


def _cond_info(cg: CallGraph, c: Condition):
    info = cg.conditions.get(c.cond_id)
    if info is None:
        return ("condition", None)
    return (info.kind, info.loc)


def _work(args):
    cg, variant, seed_index, rules, budget = args
    seed = cg.edges[seed_index]
    return [check_seed(cg, seed, r, variant, budget) if r.selector.matches(seed) else None for r in rules]


def check_cg(
    variants: Sequence[CallGraph], rules: Sequence[Rule], budget: int = DEFAULT_BUDGET, jobs: int = 1
) -> CheckReport:
    rules = list(rules)
    if not rules:
        raise CheckError("no rules given")
    validate_rules(variants[0], rules)
    units = [
        (cg, vi, si, rules, budget)
        for vi, cg in enumerate(variants)
        for si, e in enumerate(cg.edges)
        if any(r.selector.matches(e) for r in rules)
    ]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_work, units))
    else:
        results = [_work(u) for u in units]
    reports = [RuleReport(r) for r in rules]
    for per_rule in results:
        for agg, part in zip(reports, per_rule):
            if part is not None:
                agg.merge(part)
    return CheckReport(reports, len(variants))


def check(db: FactDb, rules: Sequence[Rule], budget: int = DEFAULT_BUDGET, jobs: int = 1) -> CheckReport:
    """Check ``rules`` on every call-graph variant of ``db``."""
    base = build_cg(db)
    variants = list(cg_variants(base, resolve_virtuals(db)))
    return check_cg(variants, rules, budget, jobs)


# --------------------------------------------------------------------------
# Explanations
# --------------------------------------------------------------------------


def _step(n: EstNode, root: EstNode) -> str:
    if n.kind == "parent":
        return f"return to {n.name} ({n.loc})"
    caller = n.edge.caller.name if n.edge is not None else root.name
    callee = n.edge.callee.name if n.edge is not None else n.name
    return f"{caller} → {callee} ({n.loc})"


def _assumption(c: Condition, kind: str, loc) -> str:
    where = f" at {loc}" if loc is not None else ""
    if kind == "return":
        return f"assuming the return{where} is skipped"
    return f"assuming branch {c.branch} of the {kind}{where}"


def explain(v: Violation) -> str:
    lines = [f"{v.rule}: violation (call graph variant {v.variant})"]
    lines.extend(_assumption(c, kind, loc) for c, kind, loc in v.assumptions)
    root = v.witness[0]
    for n in v.witness:
        lines.append("  " + _step(n, root))
    prefix = "end of flow" if v.ends_at_leaf else "stopped"
    lines.append(f"  {prefix}: {v.message}")
    return "\n".join(lines)


def raise_recursion_limit(limit: int = 20000) -> None:
    if sys.getrecursionlimit() < limit:
        sys.setrecursionlimit(limit)
