"""Return on risk-adjusted capital per node and for the whole portfolio."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .aggregation import aggregate_tree
from .allocation import AllocationResult, allocate
from .risk_model import RiskTree, node_mask


class ZeroCapitalWithIncome(ZeroDivisionError):
    def __init__(self, path: str) -> None:
        self.path = path
        super().__init__(f"node {path!r} has income but zero allocated capital")


@dataclass(frozen=True)
class NodeIncome:
    mean: float
    std: float | None = None

    def __post_init__(self) -> None:
        if self.std is not None and self.std < 0:
            raise ValueError("income standard deviation must be >= 0")


class IncomeStats(dict):
    """Mapping from node path (macro id or ``macro/micro``) to :class:`NodeIncome`."""

    @classmethod
    def from_means(cls, means: Mapping[str, float], stds: Mapping[str, float] | None = None) -> "IncomeStats":
        stds = stds or {}
        return cls({p: NodeIncome(float(m), None if p not in stds else float(stds[p])) for p, m in means.items()})

    def scaled(self, path: str, factor: float) -> "IncomeStats":
        out = IncomeStats(self)
        for p in _covered(self, path):
            v = self[p]
            out[p] = NodeIncome(v.mean * factor, None if v.std is None else v.std * factor)
        return out

    def mean_of(self, path: str) -> float:
        return float(sum(self[p].mean for p in _covered(self, path)))


def _covered(income: Mapping[str, NodeIncome], path: str) -> list[str]:
    """Income entries that belong to ``path`` (the node itself or its micros)."""
    if path in income:
        return [path]
    macro_id, _, micro_id = path.partition("/")
    if micro_id and macro_id in income:
        raise ValueError(f"income for {path!r} is only known at macro level {macro_id!r}")
    return [p for p in income if p.partition("/")[0] == macro_id and not micro_id and "/" in p]


def _check_disjoint(income: Mapping[str, NodeIncome]) -> None:
    macros = {p for p in income if "/" not in p}
    for p in income:
        if "/" in p and p.partition("/")[0] in macros:
            raise ValueError(f"income given for both {p!r} and its macro-risk")


@dataclass(frozen=True)
class NodeRorac:
    path: str
    income: float
    income_std: float | None
    capital: float
    rorac: float
    rorac_std: float | None

    @property
    def cv(self) -> float | None:
        """sigma(RORAC)/E(RORAC); None when undefined."""
        if self.rorac_std is None or self.rorac == 0:
            return None
        return self.rorac_std / self.rorac


@dataclass(frozen=True)
class RoracReport:
    nodes: tuple[NodeRorac, ...]
    total_income: float
    total_capital: float
    rorac: float
    rorac_std: float | None

    def node(self, path: str) -> NodeRorac:
        for n in self.nodes:
            if n.path == path:
                return n
        raise KeyError(path)

    @property
    def allocated_capital(self) -> float:
        return float(sum(n.capital for n in self.nodes))

    @property
    def weighted_rorac(self) -> float:
        """Capital-weighted mean of node RORACs over the total capital."""
        return float(sum(n.rorac * n.capital for n in self.nodes)) / self.total_capital


def compute_rorac(alloc: AllocationResult, income: Mapping[str, NodeIncome]) -> RoracReport:
    _check_disjoint(income)
    nodes = []
    for path, inc in income.items():
        capital = alloc.allocated(path)
        if capital == 0:
            if inc.mean != 0 or (inc.std or 0) != 0:
                raise ZeroCapitalWithIncome(path)
            nodes.append(NodeRorac(path, 0.0, inc.std, 0.0, 0.0, None if inc.std is None else 0.0))
            continue
        nodes.append(
            NodeRorac(
                path,
                inc.mean,
                inc.std,
                capital,
                inc.mean / capital,
                None if inc.std is None else inc.std / capital,
            )
        )
    total_income = float(sum(inc.mean for inc in income.values()))
    total = alloc.total_scr
    if total == 0:
        if total_income != 0:
            raise ZeroCapitalWithIncome("<total>")
        return RoracReport(tuple(nodes), 0.0, 0.0, 0.0, None)
    if all(inc.std is not None for inc in income.values()):
        # capital-weighted average of node sigma(RORAC); income correlations are not modelled
        sigma = float(sum(inc.std for inc in income.values())) / total
    else:
        sigma = None
    return RoracReport(tuple(nodes), total_income, total, total_income / total, sigma)


def total_rorac(tree: RiskTree, income: Mapping[str, NodeIncome]) -> float:
    scr = aggregate_tree(tree).total_scr
    return float(sum(inc.mean for inc in income.values())) / scr


def default_h_grid(eps: float = 0.01, points: int = 10) -> np.ndarray:
    return np.geomspace(eps * 1e-3, eps, points)


@dataclass(frozen=True)
class CompatibilityPoint:
    h: float
    rorac: float
    change: float


@dataclass(frozen=True)
class CompatibilityVerdict:
    node: str
    node_rorac: float
    total_rorac: float
    points: tuple[CompatibilityPoint, ...]
    passed: bool
    vacuous: bool

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"


def rorac_change(tree: RiskTree, income: IncomeStats, node: str, h: float) -> tuple[float, float]:
    """Total RORAC after growing ``node`` by a factor (1+h), and its change from h=0.

    Growth scales the node's standalone SCR (positive homogeneity) and its
    expected income by the same factor.
    """
    base = total_rorac(tree, income)
    bumped = total_rorac(tree.scaled(node, 1.0 + h), income.scaled(node, 1.0 + h))
    return bumped, bumped - base


def check_rorac_compatibility(
    tree: RiskTree,
    income: Mapping[str, NodeIncome],
    node: str,
    h_grid: Sequence[float] | None = None,
    margin: float = 1e-12,
) -> CompatibilityVerdict:
    node_mask(tree, node)  # raises on unknown path
    income = income if isinstance(income, IncomeStats) else IncomeStats(income)
    grid = default_h_grid() if h_grid is None else np.asarray(h_grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("h grid must be strictly positive")
    alloc = allocate(tree)
    capital = alloc.allocated(node)
    node_income = income.mean_of(node)
    if capital == 0:
        raise ZeroCapitalWithIncome(node)
    node_r = node_income / capital
    total_r = float(sum(v.mean for v in income.values())) / alloc.total_scr
    points = []
    for h in grid:
        r, d = rorac_change(tree, income, node, float(h))
        points.append(CompatibilityPoint(float(h), r, d))
    premise = node_r > total_r + margin
    if premise:
        passed = all(p.change > margin for p in points)
    else:
        passed = True
    return CompatibilityVerdict(node, node_r, total_r, tuple(points), passed, not premise)
