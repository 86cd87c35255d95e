"""Closed-form Euler allocation of the total SCR to macro- and micro-risks.

For the two-level square-root aggregate the Euler contribution of a macro-risk is

    SCR(Y_i|Y) = SCR_i * (sum_w SCR_w * rho_iw) / SCR

and the contribution of micro-risk x inside macro i follows from the chain rule

    SCR(Y_ix|Y,Y_i) = SCR_ix * (sum_y SCR_iy * rho_ix,iy) / SCR_i * AR_i

with AR_i = SCR(Y_i|Y) / SCR_i the allocation ratio of the macro-risk.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AggregationOutput, aggregate_tree
from .risk_model import RiskTree, tree_is_psd


class ZeroTotalScr(ZeroDivisionError):
    pass


class ZeroMacroScr(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class MacroAllocation:
    id: str
    standalone: float
    allocated: float
    ratio: float

    @property
    def delta(self) -> float:
        return self.standalone - self.allocated


@dataclass(frozen=True)
class MicroAllocation:
    path: str
    standalone: float
    allocated: float

    @property
    def delta(self) -> float:
        return self.standalone - self.allocated


@dataclass(frozen=True)
class AllocationResult:
    macros: tuple[MacroAllocation, ...]
    micros: tuple[MicroAllocation, ...]
    total_scr: float
    psd: bool = True

    def allocated(self, path: str) -> float:
        """Allocated SCR of a macro id or a ``macro/micro`` path."""
        for m in self.macros:
            if m.id == path:
                return m.allocated
        for u in self.micros:
            if u.path == path:
                return u.allocated
        raise KeyError(f"unknown node path {path!r}")

    def standalone(self, path: str) -> float:
        for m in self.macros:
            if m.id == path:
                return m.standalone
        for u in self.micros:
            if u.path == path:
                return u.standalone
        raise KeyError(f"unknown node path {path!r}")

    def macro_vector(self) -> np.ndarray:
        return np.array([m.allocated for m in self.macros])

    def micro_vector(self) -> np.ndarray:
        return np.array([u.allocated for u in self.micros])


def _macro_factors(tree: RiskTree, agg: AggregationOutput) -> np.ndarray:
    """(sum_w SCR_w rho_iw) / SCR for every macro i."""
    s = agg.macro_vector
    if agg.total_scr == 0.0:
        if np.any(s > 0):
            raise ZeroTotalScr("total SCR is zero while some macro SCR is positive (non-PSD degeneracy)")
        # one-sided directional derivative of sqrt(s'Rs) at the origin
        return np.ones_like(s)
    return (tree.corr.entries @ s) / agg.total_scr


def _micro_factors(tree: RiskTree, agg: AggregationOutput) -> list[np.ndarray]:
    """(sum_y SCR_iy rho_ix,iy) / SCR_i for every micro, grouped per macro."""
    out = []
    for macro, (_, scr_i) in zip(tree.macros, agg.macro_scrs):
        s = macro.scrs
        if scr_i == 0.0:
            if np.any(s > 0):
                raise ZeroMacroScr(f"macro {macro.id!r} aggregates to zero with positive micro SCRs")
            out.append(np.ones_like(s))
        else:
            out.append((macro.corr.entries @ s) / scr_i)
    return out


def allocate_macro(tree: RiskTree, agg: AggregationOutput | None = None) -> list[MacroAllocation]:
    agg = agg if agg is not None else aggregate_tree(tree)
    factors = _macro_factors(tree, agg)
    out = []
    for (macro_id, scr_i), f in zip(agg.macro_scrs, factors):
        allocated = scr_i * f
        ratio = allocated / scr_i if scr_i > 0 else f
        out.append(MacroAllocation(macro_id, float(scr_i), float(allocated), float(ratio)))
    return out


def allocate_micro(
    tree: RiskTree,
    agg: AggregationOutput | None = None,
    macro_alloc: list[MacroAllocation] | None = None,
) -> list[MicroAllocation]:
    agg = agg if agg is not None else aggregate_tree(tree)
    macro_alloc = macro_alloc if macro_alloc is not None else allocate_macro(tree, agg)
    out = []
    for macro, ma, f in zip(tree.macros, macro_alloc, _micro_factors(tree, agg)):
        for micro, fx in zip(macro.micros, f):
            out.append(MicroAllocation(f"{macro.id}/{micro.id}", micro.scr, float(micro.scr * fx * ma.ratio)))
    return out


def gradient(tree: RiskTree, agg: AggregationOutput | None = None) -> np.ndarray:
    """Partial derivatives of the total SCR w.r.t. each standalone micro SCR."""
    agg = agg if agg is not None else aggregate_tree(tree)
    g = _macro_factors(tree, agg)
    return np.concatenate([gi * f for gi, f in zip(g, _micro_factors(tree, agg))])


def allocate(tree: RiskTree) -> AllocationResult:
    agg = aggregate_tree(tree)
    macros = allocate_macro(tree, agg)
    micros = allocate_micro(tree, agg, macros)
    return AllocationResult(tuple(macros), tuple(micros), agg.total_scr, tree_is_psd(tree))


@dataclass(frozen=True)
class DiversificationRow:
    path: str
    level: str
    standalone: float
    allocated: float
    delta: float


@dataclass(frozen=True)
class DiversificationReport:
    rows: tuple[DiversificationRow, ...]
    total_standalone: float
    total_scr: float

    @property
    def total_diversification(self) -> float:
        return self.total_standalone - self.total_scr


def diversification_report(result: AllocationResult) -> DiversificationReport:
    rows = [DiversificationRow(m.id, "macro", m.standalone, m.allocated, m.delta) for m in result.macros]
    rows += [DiversificationRow(u.path, "micro", u.standalone, u.allocated, u.delta) for u in result.micros]
    standalone = float(sum(m.standalone for m in result.macros))
    return DiversificationReport(tuple(rows), standalone, result.total_scr)
