"""Numerical checks of the allocation's coherence and Euler properties on a given tree.

Each check returns a :class:`CheckResult` with status PASS, FAIL or N/A. The
coherence checks need every correlation matrix PSD. Subadditivity and subset
no-undercut of the two-level aggregate additionally need nonnegative macro
correlations: a negative macro correlation makes the outer square root
decreasing in some macro SCR and the nested function stops being convex.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .aggregation import aggregate_tree
from .allocation import allocate, gradient
from .risk_model import RiskTree, tree_is_psd
from .rorac import IncomeStats, NodeIncome, rorac_change

PASS, FAIL, NA = "PASS", "FAIL", "N/A"


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str
    worst: float | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status != FAIL


def _total(tree: RiskTree, scrs: np.ndarray) -> float:
    return aggregate_tree(tree.with_micro_scrs(scrs)).total_scr


def finite_difference_gradient(tree: RiskTree, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences of the total SCR, one micro coordinate at a time.

    The step is ``rel_step`` times the larger of the coordinate and the mean
    micro SCR, so tiny coordinates are not swamped by roundoff. Coordinates
    closer to zero than one step use a forward difference.
    """
    s = tree.micro_scrs()
    scale = float(s.mean()) if s.size and s.mean() > 0 else 1.0
    out = np.empty_like(s)
    for k in range(s.shape[0]):
        h = rel_step * max(s[k], scale)
        up, down = s.copy(), s.copy()
        up[k] += h
        if s[k] - h >= 0:
            down[k] -= h
            out[k] = (_total(tree, up) - _total(tree, down)) / (2 * h)
        else:
            out[k] = (_total(tree, up) - _total(tree, s)) / h
    return out


def gradient_error(tree: RiskTree, rel_step: float = 1e-6) -> float:
    """Largest |analytic - FD| scaled by the gradient's sup norm."""
    g = gradient(tree)
    fd = finite_difference_gradient(tree, rel_step)
    scale = float(np.max(np.abs(g), initial=0.0)) or 1.0
    return float(np.max(np.abs(g - fd), initial=0.0)) / scale


def full_allocation_error(tree: RiskTree) -> float:
    res = allocate(tree)
    total = res.total_scr
    errs = [abs(sum(m.allocated for m in res.macros) - total) / max(abs(total), 1e-300)]
    for m in res.macros:
        micro_sum = sum(u.allocated for u in res.micros if u.path.partition("/")[0] == m.id)
        errs.append(abs(micro_sum - m.allocated) / max(abs(m.allocated), abs(total), 1e-300))
    return max(errs)


def homogeneity_error(tree: RiskTree, lam: float) -> float:
    base = allocate(tree)
    scaled = allocate(tree.with_micro_scrs(lam * tree.micro_scrs()))
    ref = max(abs(base.total_scr), 1e-300)
    errs = [abs(scaled.total_scr - lam * base.total_scr) / (lam * ref)]
    errs += [abs(a - lam * b) / (lam * ref) for a, b in zip(scaled.micro_vector(), base.micro_vector())]
    return max(errs)


def subadditivity_gap(tree: RiskTree, other: np.ndarray) -> float:
    """SCR(s + t) - SCR(s) - SCR(t); nonpositive for a subadditive aggregate."""
    s = tree.micro_scrs()
    return _total(tree, s + other) - _total(tree, s) - _total(tree, other)


def marginal_undercut(tree: RiskTree) -> float:
    """max over nodes of allocated - standalone (<= 0 means no undercut)."""
    res = allocate(tree)
    gaps = [m.allocated - m.standalone for m in res.macros] + [u.allocated - u.standalone for u in res.micros]
    return float(max(gaps))


def subset_undercut(tree: RiskTree, subset: np.ndarray) -> float:
    """sum of allocations over a micro subset minus the SCR of that subset alone."""
    res = allocate(tree)
    s = tree.micro_scrs()
    alone = _total(tree, np.where(subset, s, 0.0))
    return float(res.micro_vector()[subset].sum() - alone)


def coherence_applicable(tree: RiskTree) -> tuple[bool, bool, str]:
    """(marginal checks applicable, subset/subadditivity applicable, reason)."""
    if not tree_is_psd(tree):
        return False, False, "correlation matrix not PSD"
    if len(tree.macros) > 1 and np.any(tree.corr.entries < 0):
        return True, False, "negative macro correlation: two-level aggregate not convex"
    return True, True, ""


def run_checks(
    tree: RiskTree,
    income: Mapping[str, NodeIncome] | None = None,
    seed: int = 0,
    trials: int = 50,
    h: float = 1e-4,
) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    marginal_ok, subset_ok, why = coherence_applicable(tree)
    results = []

    err = full_allocation_error(tree)
    results.append(CheckResult("full_allocation", PASS if err <= 1e-9 else FAIL, err))

    err = gradient_error(tree)
    results.append(CheckResult("gradient_vs_fd", PASS if err <= 1e-6 else FAIL, err))

    err = max(homogeneity_error(tree, lam) for lam in (0.5, 2.0, 3.7))
    results.append(CheckResult("positive_homogeneity", PASS if err <= 1e-12 else FAIL, err))

    s = tree.micro_scrs()
    scale = float(s.sum()) or 1.0
    if subset_ok:
        worst = max(subadditivity_gap(tree, rng.uniform(0, 1, s.shape) * s.max(initial=1.0)) for _ in range(trials))
        results.append(CheckResult("subadditivity", PASS if worst <= 1e-9 * scale else FAIL, worst))
    else:
        results.append(CheckResult("subadditivity", NA, None, why))
    if marginal_ok:
        worst = marginal_undercut(tree)
        results.append(CheckResult("marginal_no_undercut", PASS if worst <= 1e-9 * scale else FAIL, worst))
    else:
        results.append(CheckResult("marginal_no_undercut", NA, None, why))
    if subset_ok:
        worst = -np.inf
        for _ in range(trials):
            mask = rng.random(s.shape[0]) < 0.5
            worst = max(worst, subset_undercut(tree, mask))
        results.append(CheckResult("subset_no_undercut", PASS if worst <= 1e-9 * scale else FAIL, float(worst)))
    else:
        results.append(CheckResult("subset_no_undercut", NA, None, why))

    if not income:
        results.append(CheckResult("rorac_compatibility", NA, None, "no income data"))
    else:
        inc = income if isinstance(income, IncomeStats) else IncomeStats(income)
        res = allocate(tree)
        total_r = sum(v.mean for v in inc.values()) / res.total_scr
        bad = 0
        tested = 0
        for path in inc:
            cap = res.allocated(path)
            if cap <= 0:
                # with negative capital the first-order change has sign -(RORAC_s - RORAC)
                continue
            diff = inc[path].mean / cap - total_r
            if abs(diff) <= 1e-6:
                continue
            tested += 1
            _, change = rorac_change(tree, inc, path, h)
            if np.sign(change) != np.sign(diff):
                bad += 1
        status = PASS if bad == 0 else FAIL
        results.append(CheckResult("rorac_compatibility", status, float(bad), f"{tested} nodes tested at h={h:g}"))
    return results


def symmetric_pairs(corr: np.ndarray, scrs: Sequence[float], tol: float = 0.0) -> list[tuple[int, int]]:
    """Index pairs with equal SCR whose correlation rows agree off the pair."""
    n = len(scrs)
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if abs(scrs[i] - scrs[j]) > tol:
                continue
            keep = [k for k in range(n) if k not in (i, j)]
            if np.all(np.abs(corr[i, keep] - corr[j, keep]) <= tol):
                pairs.append((i, j))
    return pairs
