"""Command-line front end: ``scralloc <subcommand> [flags]``.

Exit codes: 0 success, 1 domain error (invalid data, failed check, no
feasible scenario), 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io_formats as iof
from .aggregation import NegativeRadicand, aggregate_tree
from .allocation import ZeroMacroScr, ZeroTotalScr, allocate, diversification_report
from .mc_oracle import EmptyWindow, McConfig, NotPsd, compare_with_closed_form
from .optimizer import NoFeasibleScenario, ScenarioError, emit_frontier, frontier_from_rorac, optimize
from .properties import FAIL, run_checks
from .risk_model import validate_tree
from .rorac import ZeroCapitalWithIncome, check_rorac_compatibility, compute_rorac, default_h_grid

log = logging.getLogger("scralloc")

DOMAIN_ERRORS = (
    iof.ParseError,
    NegativeRadicand,
    ZeroTotalScr,
    ZeroMacroScr,
    ZeroCapitalWithIncome,
    NotPsd,
    EmptyWindow,
    ScenarioError,
    NoFeasibleScenario,
    KeyError,
    FileNotFoundError,
)


class DomainError(Exception):
    pass


def _h_grid(text: str | None) -> np.ndarray:
    """``eps:points`` (log-spaced up to eps) or a comma list of steps."""
    if not text:
        return default_h_grid()
    try:
        if ":" in text:
            eps, points = text.split(":", 1)
            return default_h_grid(float(eps), int(points))
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad --h-grid {text!r}") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tree", type=Path, help="risk tree JSON document")
    p.add_argument("--income", type=Path, help="income statistics JSON document")
    p.add_argument("--out", type=Path, help="directory for report files")
    p.add_argument("--format", choices=("json", "csv"), default="json", help="report file format (default json)")
    p.add_argument("--seed", type=int, default=20240101, help="RNG seed for simulation and randomized checks")
    p.add_argument("--samples", type=int, default=1_000_000, help="Monte Carlo sample count (default 10^6)")
    p.add_argument("--scenarios", type=Path, help="scenario list JSON document")
    p.add_argument("--constraints", type=Path, help="constraint set JSON document")
    p.add_argument("--strict-psd", action="store_true", help="treat non-PSD correlation matrices as errors")
    p.add_argument("--repair-psd", action="store_true", help="clip correlation eigenvalues to PSD before simulating")
    p.add_argument("--h-grid", dest="h_grid", help="RORAC-compatibility steps: 'eps:points' or 'h1,h2,...'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scralloc", description="Standard-formula SCR aggregation, Euler allocation and RORAC")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "aggregate": "square-root aggregation of a risk tree",
        "allocate": "Euler allocation to macro- and micro-risks",
        "rorac": "RORAC per node and RORAC-compatibility test",
        "check": "run the property suite on a tree",
        "simulate": "Monte Carlo cross-check of the closed-form results",
        "optimize": "pick the best feasible scenario",
        "plot": "risk-return scatter as SVG",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    return parser


def _need(args: argparse.Namespace, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


class UsageError(Exception):
    pass


def _load_tree(args: argparse.Namespace):
    tree = iof.parse_tree(args.tree)
    report = validate_tree(tree)
    for w in report.warnings:
        msg = f"warning: {w.path or '<macro level>'}: {w.message}"
        if args.strict_psd:
            raise DomainError(msg.replace("warning", "error", 1))
        print(msg, file=sys.stderr)
    return tree


def _emit(args: argparse.Namespace, tables: dict[str, iof.Table]) -> None:
    for name in sorted(tables):
        sys.stdout.write(f"# {name}\n")
        sys.stdout.write(iof.render_table(tables[name]))
    if args.out is not None:
        iof.write_reports(tables, args.out, args.format)


def cmd_aggregate(args) -> int:
    _need(args, "tree")
    tree = _load_tree(args)
    _emit(args, {"aggregation": iof.aggregation_table(aggregate_tree(tree))})
    return 0


def cmd_allocate(args) -> int:
    _need(args, "tree")
    tree = _load_tree(args)
    res = allocate(tree)
    _emit(args, {"allocation": iof.allocation_table(res), "diversification": iof.diversification_table(diversification_report(res))})
    return 0


def cmd_rorac(args) -> int:
    _need(args, "tree", "income")
    tree = _load_tree(args)
    income = iof.parse_income(args.income)
    report = compute_rorac(allocate(tree), income)
    tables = {"rorac": iof.rorac_table(report)}
    grid = _h_grid(args.h_grid)
    rows, header = [], None
    for path in income:
        if report.node(path).capital == 0:
            continue
        verdict = check_rorac_compatibility(tree, income, path, grid)
        t = iof.compatibility_table(verdict)
        header = t.header + ["verdict"]
        rows += [r + [verdict.status] for r in t.rows]
    if header:
        tables["compatibility"] = iof.Table(header, rows, "compatibility")
    _emit(args, tables)
    return 0


def cmd_check(args) -> int:
    _need(args, "tree")
    tree = _load_tree(args)
    income = iof.parse_income(args.income) if args.income else None
    results = run_checks(tree, income, seed=args.seed)
    table = iof.Table(["check", "status", "worst", "detail"], [[r.name, r.status, r.worst, r.detail] for r in results], "checks")
    _emit(args, {"checks": table})
    return 1 if any(r.status == FAIL for r in results) else 0


def cmd_simulate(args) -> int:
    _need(args, "tree")
    tree = _load_tree(args)
    config = McConfig(sample_count=args.samples, seed=args.seed, psd_repair="clip-eigenvalues" if args.repair_psd else "off")
    if not args.repair_psd and not validate_tree(tree).psd:
        raise DomainError("tree has a non-PSD correlation matrix; rerun with --repair-psd")
    report = compare_with_closed_form(tree, config)
    print(f"seed={config.seed} samples={config.sample_count} window={report.estimate.window_count}")
    _emit(args, {"mc_comparison": iof.comparison_table(report)})
    if report.flagged:
        print("flagged: " + ", ".join(r.path for r in report.flagged), file=sys.stderr)
    return 0


def cmd_optimize(args) -> int:
    _need(args, "scenarios", "constraints")
    scenarios = iof.parse_scenarios(args.scenarios)
    constraints = iof.parse_constraints(args.constraints)
    report = optimize(scenarios, constraints, raise_if_infeasible=False)
    frontier = emit_frontier(report, scenarios)
    _emit(args, {"optimization": iof.optimization_table(report), "frontier": iof.frontier_table(frontier)})
    if report.optimum is None:
        raise NoFeasibleScenario(report)
    print(f"selected: {report.optimum.id} E(RORAC)={report.optimum.expected_rorac:.12g} SCR={report.optimum.total_scr:.12g}")
    return 0


def cmd_plot(args) -> int:
    _need(args, "out")
    if args.scenarios is not None:
        _need(args, "constraints")
        scenarios = iof.parse_scenarios(args.scenarios)
        report = optimize(scenarios, iof.parse_constraints(args.constraints), raise_if_infeasible=False)
        data = emit_frontier(report, scenarios)
    else:
        _need(args, "tree", "income")
        tree = _load_tree(args)
        data = frontier_from_rorac(compute_rorac(allocate(tree), iof.parse_income(args.income)), tree)
    args.out.mkdir(parents=True, exist_ok=True)
    path = iof.emit_svg_scatter(data, args.out / "frontier.svg")
    iof.write_reports({"frontier": iof.frontier_table(data)}, args.out, args.format)
    print(f"wrote {path}")
    return 0


COMMANDS = {
    "aggregate": cmd_aggregate,
    "allocate": cmd_allocate,
    "rorac": cmd_rorac,
    "check": cmd_check,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "plot": cmd_plot,
}


def run(argv: list[str] | None = None) -> int:
    level = os.environ.get("SCRALLOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, *DOMAIN_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
