"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys

from . import __version__
from .callgraph import CallGraph, CgEdge, build_cg, cg_to_dot, cg_to_json, cg_variants
from .checker import check_cg, raise_recursion_limit
from .ctl import Rule, builtin_rules, parse_formula, parse_rules, parse_selector
from .est import DEFAULT_BUDGET, build_est, tree_to_dot, tree_to_json, tree_to_text
from .facts import FactDb, load_facts, serialize_facts
from .frontend import FrontendError, parse_directory, resolve_virtuals
from .nest import assignment_count, derive_nest, nest_count, parse_assignment

log = logging.getLogger("estcheck")

EMIT_ALIASES = {"--emit-cg": "cg", "--emit-est": "est", "--emit-nest": "nest"}


class UsageError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="estcheck", description="Call-sequence checks for a C++ subset.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(sp, formats=None, default=None):
        sp.add_argument("--in", dest="input", required=True, metavar="PATH",
                        help="source directory or fact file")
        sp.add_argument("--out", metavar="FILE", help="write output here instead of stdout")
        if formats:
            sp.add_argument("--format", choices=formats, default=default)
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("parse", help="translate sources into a fact file"))
    common(sub.add_parser("facts", help="load and re-emit facts"), ["text", "json"], "text")
    cg = sub.add_parser("cg", help="call graph")
    common(cg, ["dot", "json"], "dot")
    cg.add_argument("--variant", type=int, default=0, help="virtual-dispatch variant index")

    for name in ("est", "nest"):
        sp = sub.add_parser(name, help=f"{name.upper()} for one seed call")
        common(sp, ["dot", "json", "text"], "dot")
        sp.add_argument("--seed", required=False, metavar="CALLER->CALLEE[@LINE:COL]")
        sp.add_argument("--variant", type=int, default=0)
        sp.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    nest = sub.choices["nest"]
    nest.add_argument("--assume", default="", metavar='"(id,branch),..."')
    nest.add_argument("--count", action="store_true", help="print assignment and NEST counts")

    ck = sub.add_parser("check", help="run rules")
    common(ck, ["text", "json"], "text")
    ck.add_argument("--rule", action="append", default=[], metavar="NAME",
                    help="built-in rule name or 'all' (repeatable)")
    ck.add_argument("--formula", help="custom CTL formula")
    ck.add_argument("--select", help='seed selector for --formula, e.g. callee == "Semaphore::enter"')
    ck.add_argument("--rules-file", metavar="FILE", help="lines of 'name: selector: formula'")
    ck.add_argument("--jobs", type=int, default=1)
    ck.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    return p


def _rewrite_aliases(argv: list[str]) -> list[str]:
    """``--emit-cg dot ...`` becomes ``cg --format dot ...``."""
    for i, arg in enumerate(argv):
        flag, _, inline = arg.partition("=")
        if flag in EMIT_ALIASES:
            rest = argv[:i] + argv[i + 1:]
            if inline:
                fmt = inline
            elif i + 1 < len(argv):
                fmt = argv[i + 1]
                rest = argv[:i] + argv[i + 2:]
            else:
                raise UsageError(f"{flag} needs a format")
            return [EMIT_ALIASES[flag], "--format", fmt] + rest
    return argv


def load_input(path: str) -> FactDb:
    if os.path.isdir(path):
        return parse_directory(path)
    if not os.path.exists(path):
        raise UsageError(f"no such file or directory: {path}")
    with open(path, encoding="utf-8") as fh:
        return load_facts(fh)


_SEED = re.compile(r"^\s*(?P<caller>.+?)\s*->\s*(?P<callee>.+?)\s*(?:@(?:(?P<file>[^@:]+):)?(?P<line>\d+):(?P<col>\d+))?\s*$")


def resolve_seed(cg: CallGraph, text: str) -> CgEdge:
    m = _SEED.match(text)
    if not m:
        raise UsageError(f"bad seed {text!r}; expected CALLER->CALLEE[@LINE:COL]")
    found = [e for e in cg.edges if e.caller.name == m["caller"] and e.callee.name == m["callee"]]
    if m["line"]:
        pos = (int(m["line"]), int(m["col"]))
        found = [e for e in found if e.loc.start == pos and (m["file"] is None or e.loc.file == m["file"])]
    if not found:
        raise UsageError(f"no call edge matches seed {text!r}")
    if len(found) > 1:
        listing = ", ".join(f"{e.caller.name}->{e.callee.name}@{e.loc}" for e in found)
        raise UsageError(f"seed {text!r} is ambiguous; candidates: {listing}")
    return found[0]


def _variant(db: FactDb, index: int) -> CallGraph:
    for i, cg in enumerate(cg_variants(build_cg(db), resolve_virtuals(db))):
        if i == index:
            return cg
    raise UsageError(f"no call graph variant {index}")


def _facts_json(db: FactDb) -> str:
    nodes = [
        {
            "file": n.file, "order": n.ast_order, "id": n.id, "parent": n.parent_id,
            "type": n.node_type, "src_loc": n.src_loc, "params": list(n.params),
        }
        for n in db.sorted_nodes()
    ]
    return json.dumps(nodes, indent=2) + "\n"


def _rules(args) -> list[Rule]:
    known = {r.name: r for r in builtin_rules()}
    rules: list[Rule] = []
    for name in args.rule:
        if name == "all":
            rules.extend(r for r in known.values() if r not in rules)
        elif name in known:
            if known[name] not in rules:
                rules.append(known[name])
        else:
            raise UsageError(f"unknown rule {name!r}; built-in rules: {', '.join(known)}, all")
    if args.formula:
        if not args.select:
            raise UsageError("--formula needs --select")
        rules.append(Rule("formula", parse_selector(args.select), parse_formula(args.formula)))
    elif args.select:
        raise UsageError("--select only applies to --formula")
    if args.rules_file:
        with open(args.rules_file, encoding="utf-8") as fh:
            rules.extend(parse_rules(fh.read(), args.rules_file))
    if not rules:
        raise UsageError("nothing to check; give --rule, --formula or --rules-file")
    return rules


def run(argv: list[str] | None = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _rewrite_aliases(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"estcheck: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    raise_recursion_limit()
    try:
        text, code = _dispatch(args)
    except UsageError as exc:
        print(f"estcheck: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RecursionError, FrontendError) as exc:
        print(f"estcheck: error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return code


def _dispatch(args) -> tuple[str, int]:
    if args.command in ("est", "nest") and not args.seed:
        raise UsageError(f"{args.command} requires --seed")
    db = load_input(args.input)
    if args.command == "parse":
        return serialize_facts(db), 0
    if args.command == "facts":
        return (_facts_json(db) if args.format == "json" else serialize_facts(db)), 0
    if args.command == "check":
        base = build_cg(db)
        variants = list(cg_variants(base, resolve_virtuals(db)))
        report = check_cg(variants, _rules(args), args.budget, max(1, args.jobs))
        text = report.to_json() if args.format == "json" else report.to_text()
        return text, report.exit_code()
    cg = _variant(db, args.variant)
    if args.command == "cg":
        return (cg_to_json(cg) if args.format == "json" else cg_to_dot(cg)), 0
    seed = resolve_seed(cg, args.seed)
    tree = build_est(cg, seed, args.budget)
    if args.command == "nest":
        if args.count:
            return f"assignments: {assignment_count(tree)}\nnests: {nest_count(tree)}\n", 0
        tree = derive_nest(tree, parse_assignment(args.assume))
    render = {"dot": tree_to_dot, "json": tree_to_json, "text": tree_to_text}[args.format]
    return render(tree), 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
