"""Selection of underwriting / reinsurance strategies by expected RORAC.

A strategy is a finite scenario: a premium vector, a reinsurance descriptor,
the risk tree it induces and the expected income per line of business. All
scenarios are evaluated and the feasible one with the highest expected total
RORAC wins (ties: lower total SCR, then scenario id).
"""
from __future__ import annotations

import math
import operator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .allocation import allocate
from .rorac import IncomeStats, RoracReport, compute_rorac
from .risk_model import RiskTree, validate_tree


class ScenarioError(RuntimeError):
    def __init__(self, scenario_id: str, cause: Exception) -> None:
        self.scenario_id = scenario_id
        self.cause = cause
        super().__init__(f"scenario {scenario_id!r}: {cause}")


class NoFeasibleScenario(RuntimeError):
    def __init__(self, report: "OptimizationReport") -> None:
        self.report = report
        lines = []
        for res in report.infeasible:
            worst = sorted(res.verdict.violations, key=_tightness)[:3]
            lines.append(f"{res.id}: " + "; ".join(v.describe() for v in worst))
        super().__init__("no feasible scenario\n" + "\n".join(lines))


def _tightness(check: "ConstraintCheck") -> float:
    return -math.inf if check.margin is None else check.margin


@dataclass(frozen=True)
class Reinsurance:
    tags: Mapping[str, str] = field(default_factory=dict)
    params: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    id: str
    premiums: Mapping[str, float]
    tree: RiskTree
    income: IncomeStats
    reinsurance: Reinsurance = field(default_factory=Reinsurance)


_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
    "in": lambda a, b: a in b,
    "not_in": lambda a, b: a not in b,
}


@dataclass(frozen=True)
class ReinsuranceRule:
    """Named predicate ``descriptor[key] <op> value`` over tags or parameters."""

    name: str
    key: str
    op: str
    value: Any

    def __post_init__(self) -> None:
        if self.op not in _OPS:
            raise ValueError(f"unknown operator {self.op!r} in rule {self.name!r}")

    def evaluate(self, r: Reinsurance) -> tuple[bool, float | None]:
        if self.key in r.params:
            actual: Any = r.params[self.key]
        elif self.key in r.tags:
            actual = r.tags[self.key]
        else:
            return False, None
        value = tuple(self.value) if self.op in ("in", "not_in") else self.value
        ok = bool(_OPS[self.op](actual, value))
        margin = None
        if isinstance(actual, (int, float)) and isinstance(value, (int, float)) and self.op in ("<", "<="):
            margin = float(value - actual)
        elif isinstance(actual, (int, float)) and isinstance(value, (int, float)) and self.op in (">", ">="):
            margin = float(actual - value)
        return ok, margin


@dataclass(frozen=True)
class ConstraintSet:
    scr_lower: float | None = None
    scr_upper: float | None = None
    premium_bounds: Mapping[str, tuple[float | None, float | None]] = field(default_factory=dict)
    cv_cap: float | None = None
    cv_caps: Mapping[str, float] = field(default_factory=dict)
    reinsurance: tuple[ReinsuranceRule, ...] = ()
    scr_strict: bool = True

    def __post_init__(self) -> None:
        # infinite bounds and caps are the same as no bound
        if self.scr_lower is not None and self.scr_lower == -math.inf:
            object.__setattr__(self, "scr_lower", None)
        if self.scr_upper is not None and self.scr_upper == math.inf:
            object.__setattr__(self, "scr_upper", None)
        if self.cv_cap is not None and self.cv_cap == math.inf:
            object.__setattr__(self, "cv_cap", None)
        bounds = {
            lob: (None if lo == -math.inf else lo, None if hi == math.inf else hi)
            for lob, (lo, hi) in self.premium_bounds.items()
        }
        object.__setattr__(self, "premium_bounds", bounds)
        if self.scr_lower is not None and self.scr_upper is not None and self.scr_lower > self.scr_upper:
            raise ValueError("SCR lower bound exceeds upper bound")
        for lob, (lo, hi) in self.premium_bounds.items():
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"premium bounds inverted for {lob!r}")
        for cap in [self.cv_cap, *self.cv_caps.values()]:
            if cap is not None and not cap > 0:
                raise ValueError("CV cap must be positive")
        object.__setattr__(self, "reinsurance", tuple(self.reinsurance))

    def relaxed(self, constraint: str) -> "ConstraintSet":
        """Copy with one constraint family removed ('scr', 'premium', 'cv', 'reinsurance')."""
        kw = dict(
            scr_lower=self.scr_lower,
            scr_upper=self.scr_upper,
            premium_bounds=self.premium_bounds,
            cv_cap=self.cv_cap,
            cv_caps=self.cv_caps,
            reinsurance=self.reinsurance,
            scr_strict=self.scr_strict,
        )
        if constraint == "scr":
            kw.update(scr_lower=None, scr_upper=None)
        elif constraint == "premium":
            kw.update(premium_bounds={})
        elif constraint == "cv":
            kw.update(cv_cap=None, cv_caps={})
        elif constraint == "reinsurance":
            kw.update(reinsurance=())
        else:
            raise ValueError(f"unknown constraint family {constraint!r}")
        return ConstraintSet(**kw)


@dataclass(frozen=True)
class ConstraintCheck:
    id: str
    passed: bool
    margin: float | None
    detail: str = ""

    def describe(self) -> str:
        m = "n/a" if self.margin is None else f"{self.margin:.6g}"
        return f"{self.id} ({self.detail}, margin {m})" if self.detail else f"{self.id} (margin {m})"


@dataclass(frozen=True)
class FeasibilityVerdict:
    scenario_id: str
    checks: tuple[ConstraintCheck, ...]

    @property
    def feasible(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def violations(self) -> list[ConstraintCheck]:
        return [c for c in self.checks if not c.passed]


@dataclass(frozen=True)
class ScenarioResult:
    id: str
    total_scr: float
    rorac: RoracReport
    verdict: FeasibilityVerdict

    @property
    def expected_rorac(self) -> float:
        return self.rorac.rorac


def evaluate_scenario(s: Scenario) -> tuple[float, RoracReport]:
    try:
        report = validate_tree(s.tree)
        if not report.ok:
            raise ValueError("; ".join(f"{v.path}: {v.message}" for v in report.errors))
        if any(p < 0 for p in s.premiums.values()):
            raise ValueError("premiums must be nonnegative")
        alloc = allocate(s.tree)
        rorac = compute_rorac(alloc, s.income)
    except Exception as exc:  # tag with the scenario id
        raise ScenarioError(s.id, exc) from exc
    return alloc.total_scr, rorac


def _bound_check(cid: str, value: float, lo: float | None, hi: float | None, strict: bool) -> list[ConstraintCheck]:
    out = []
    if lo is not None:
        margin = value - lo
        ok = margin > 0 if strict else margin >= 0
        out.append(ConstraintCheck(f"{cid}_lower", ok, margin, "" if ok else f"{cid} {'<=' if strict else '<'} {lo:g}"))
    if hi is not None:
        margin = hi - value
        ok = margin > 0 if strict else margin >= 0
        out.append(ConstraintCheck(f"{cid}_upper", ok, margin, "" if ok else f"{cid} {'>=' if strict else '>'} {hi:g}"))
    return out


def check_feasibility(
    s: Scenario,
    c: ConstraintSet,
    evaluation: tuple[float, RoracReport] | None = None,
) -> FeasibilityVerdict:
    total_scr, rorac = evaluation if evaluation is not None else evaluate_scenario(s)
    checks = _bound_check("scr", total_scr, c.scr_lower, c.scr_upper, c.scr_strict)
    for lob in sorted(c.premium_bounds):
        lo, hi = c.premium_bounds[lob]
        if lob not in s.premiums:
            checks.append(ConstraintCheck(f"premium:{lob}", False, None, "premium missing"))
            continue
        checks.extend(_bound_check(f"premium:{lob}", s.premiums[lob], lo, hi, True))
    if c.cv_cap is not None or c.cv_caps:
        for node in rorac.nodes:
            cap = c.cv_caps.get(node.path, c.cv_cap)
            if cap is None:
                continue
            cid = f"cv:{node.path}"
            if node.rorac <= 0:
                checks.append(ConstraintCheck(cid, False, None, "CV undefined: E(RORAC) <= 0"))
            elif node.rorac_std is None:
                checks.append(ConstraintCheck(cid, False, None, "CV undefined: sigma(RORAC) missing"))
            else:
                margin = cap - node.cv
                ok = margin > 0
                checks.append(ConstraintCheck(cid, ok, margin, "" if ok else f"CV {node.cv:.6g} >= {cap:g}"))
    for rule in c.reinsurance:
        ok, margin = rule.evaluate(s.reinsurance)
        detail = "" if ok else f"{rule.key} {rule.op} {rule.value!r} fails"
        checks.append(ConstraintCheck(f"reinsurance:{rule.name}", ok, margin, detail))
    return FeasibilityVerdict(s.id, tuple(checks))


@dataclass(frozen=True)
class OptimizationReport:
    feasible: tuple[ScenarioResult, ...]
    infeasible: tuple[ScenarioResult, ...]
    optimum: ScenarioResult | None

    @property
    def frontier(self) -> list[tuple[str, float, float]]:
        """(scenario id, total SCR, E(RORAC)) for every feasible scenario."""
        pts = [(r.id, r.total_scr, r.expected_rorac) for r in self.feasible]
        return sorted(pts, key=lambda p: (p[1], p[0]))


def ranking_key(result: ScenarioResult) -> tuple[float, float, str]:
    return (-result.expected_rorac, result.total_scr, result.id)


def optimize(
    scenarios: Sequence[Scenario],
    c: ConstraintSet,
    workers: int = 1,
    raise_if_infeasible: bool = True,
) -> OptimizationReport:
    if not scenarios:
        raise ValueError("at least one scenario is required")
    ids = [s.id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise ValueError("scenario ids must be unique")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            evaluations = list(pool.map(evaluate_scenario, scenarios))
    else:
        evaluations = [evaluate_scenario(s) for s in scenarios]
    results = []
    for s, ev in zip(scenarios, evaluations):
        verdict = check_feasibility(s, c, ev)
        results.append(ScenarioResult(s.id, ev[0], ev[1], verdict))
    feasible = sorted((r for r in results if r.verdict.feasible), key=ranking_key)
    infeasible = tuple(r for r in results if not r.verdict.feasible)
    report = OptimizationReport(tuple(feasible), infeasible, feasible[0] if feasible else None)
    if report.optimum is None and raise_if_infeasible:
        raise NoFeasibleScenario(report)
    return report


@dataclass(frozen=True)
class FrontierRow:
    lob: str
    name: str
    rorac: float
    rorac_std: float | None
    capital: float


@dataclass(frozen=True)
class FrontierDataset:
    rows: tuple[FrontierRow, ...]
    total: FrontierRow | None
    scenario_id: str = ""
    note: str = ""


def _node_name(tree: RiskTree | None, path: str) -> str:
    if tree is None:
        return path
    macro_id, _, micro_id = path.partition("/")
    try:
        macro = tree.macro(macro_id)
        node = macro.micro(micro_id) if micro_id else macro
    except KeyError:
        return path
    return node.name or path


def frontier_from_rorac(report: RoracReport, tree: RiskTree | None = None, scenario_id: str = "") -> FrontierDataset:
    rows = tuple(
        FrontierRow(n.path, _node_name(tree, n.path), n.rorac, n.rorac_std, n.capital) for n in report.nodes
    )
    total = FrontierRow("total", "Total", report.rorac, report.rorac_std, report.total_capital)
    return FrontierDataset(rows, total, scenario_id)


def emit_frontier(report: OptimizationReport, scenarios: Sequence[Scenario] = ()) -> FrontierDataset:
    """Per-LoB risk-return rows of the selected scenario plus a total row."""
    if report.optimum is None:
        return FrontierDataset((), None, "", "no feasible scenario: risk-return profile is empty")
    trees = {s.id: s.tree for s in scenarios}
    return frontier_from_rorac(report.optimum.rorac, trees.get(report.optimum.id), report.optimum.id)
