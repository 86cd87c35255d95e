import math

import numpy as np
import pytest

from scralloc.optimizer import (
    ConstraintSet,
    NoFeasibleScenario,
    Reinsurance,
    ReinsuranceRule,
    Scenario,
    ScenarioError,
    check_feasibility,
    emit_frontier,
    evaluate_scenario,
    optimize,
)
from scralloc.profiles import load_profile, profile_scenario
from scralloc.risk_model import CorrelationMatrix, flat_tree
from scralloc.rorac import IncomeStats, NodeIncome


def make_scenario(sid, rorac, scr=100.0, premium=50.0, sigma=0.01, tags=None, params=None):
    tree = flat_tree([scr], [[1.0]], ids=["lob"])
    income = IncomeStats({"total/lob": NodeIncome(rorac * scr, sigma * scr)})
    return Scenario(sid, {"total/lob": premium}, tree, income, Reinsurance(tags or {}, params or {}))


def test_profile_scenario_evaluation():
    rows, printed = load_profile()
    total_scr, rep = evaluate_scenario(profile_scenario(rows))
    assert abs(total_scr - 28294) <= 5
    assert abs(rep.rorac - 0.095) <= 0.001


def test_single_lob():
    total_scr, rep = evaluate_scenario(make_scenario("s", 0.07, scr=250.0))
    assert total_scr == 250.0
    assert rep.rorac == pytest.approx(0.07)


def test_premium_scale_homogeneity():
    tree = flat_tree([3.0, 4.0, 5.0], CorrelationMatrix.constant(3, 0.25))
    inc = {"total/r1": 1.0, "total/r2": -0.5, "total/r3": 2.0}
    lam = 3.5
    base = Scenario("a", {}, tree, IncomeStats.from_means(inc))
    scaled = Scenario("b", {}, tree.with_micro_scrs(lam * tree.micro_scrs()),
                      IncomeStats.from_means({k: lam * v for k, v in inc.items()}))
    scr_a, rep_a = evaluate_scenario(base)
    scr_b, rep_b = evaluate_scenario(scaled)
    assert scr_b == pytest.approx(lam * scr_a, rel=1e-12)
    assert rep_b.rorac == pytest.approx(rep_a.rorac, rel=1e-12)


def test_vacuous_constraints_feasible():
    c = ConstraintSet(scr_lower=0.0, scr_upper=math.inf, premium_bounds={"total/lob": (0.0, math.inf)}, cv_cap=math.inf)
    assert check_feasibility(make_scenario("s", 0.1), c).feasible


def test_scr_cap_violation_reported():
    rows, _ = load_profile()
    verdict = check_feasibility(profile_scenario(rows), ConstraintSet(scr_upper=20_000))
    assert not verdict.feasible
    (v,) = verdict.violations
    assert v.id == "scr_upper" and "SCR >= 20000" in v.detail.replace("scr", "SCR")
    assert v.margin == pytest.approx(20_000 - 28_290, abs=1e-6)


def test_negative_rorac_fails_cv_rule():
    rows, _ = load_profile()
    verdict = check_feasibility(profile_scenario(rows), ConstraintSet(cv_cap=10.0))
    failed = {v.id: v for v in verdict.violations}
    assert "cv:lob/income_protection" in failed
    assert "undefined" in failed["cv:lob/income_protection"].detail
    assert failed["cv:lob/income_protection"].margin is None


def test_cv_cap_per_lob_override():
    s = make_scenario("s", 0.1, sigma=0.05)  # CV = 0.5
    assert not check_feasibility(s, ConstraintSet(cv_cap=0.4)).feasible
    assert check_feasibility(s, ConstraintSet(cv_cap=0.4, cv_caps={"total/lob": 0.6})).feasible


def test_strict_versus_weak_scr_bounds():
    s = make_scenario("s", 0.1, scr=100.0)
    assert not check_feasibility(s, ConstraintSet(scr_upper=100.0)).feasible
    assert check_feasibility(s, ConstraintSet(scr_upper=100.0, scr_strict=False)).feasible


def test_premium_bounds_and_missing_premium():
    s = make_scenario("s", 0.1, premium=50.0)
    assert not check_feasibility(s, ConstraintSet(premium_bounds={"total/lob": (50.0, None)})).feasible
    assert check_feasibility(s, ConstraintSet(premium_bounds={"total/lob": (49.0, 51.0)})).feasible
    verdict = check_feasibility(s, ConstraintSet(premium_bounds={"other": (None, 10.0)}))
    assert [v.id for v in verdict.violations] == ["premium:other"]


def test_reinsurance_predicates():
    s = make_scenario("s", 0.1, tags={"program": "quota_share"}, params={"retention": 0.6})
    rules = (
        ReinsuranceRule("retention_cap", "retention", "<=", 0.7),
        ReinsuranceRule("program_type", "program", "in", ["quota_share", "xl"]),
    )
    assert check_feasibility(s, ConstraintSet(reinsurance=rules)).feasible
    bad = (ReinsuranceRule("retention_cap", "retention", "<=", 0.5), ReinsuranceRule("needs", "limit", ">", 0))
    ids = [v.id for v in check_feasibility(s, ConstraintSet(reinsurance=bad)).violations]
    assert ids == ["reinsurance:retention_cap", "reinsurance:needs"]
    with pytest.raises(ValueError):
        ReinsuranceRule("x", "k", "~", 1)


def test_constraint_set_validation():
    with pytest.raises(ValueError):
        ConstraintSet(scr_lower=10, scr_upper=5)
    with pytest.raises(ValueError):
        ConstraintSet(premium_bounds={"a": (3.0, 1.0)})
    with pytest.raises(ValueError):
        ConstraintSet(cv_cap=0.0)


def test_argmax_and_constrained_argmax():
    scenarios = [make_scenario("a", 0.08, scr=100), make_scenario("b", 0.12, scr=300), make_scenario("c", 0.10, scr=200)]
    assert optimize(scenarios, ConstraintSet()).optimum.id == "b"
    report = optimize(scenarios, ConstraintSet(scr_upper=250))
    assert report.optimum.id == "c"
    assert [r.id for r in report.infeasible] == ["b"]


def test_tie_break_order():
    scenarios = [make_scenario("z", 0.1, scr=200), make_scenario("y", 0.1, scr=100), make_scenario("x", 0.1, scr=100)]
    report = optimize(scenarios, ConstraintSet())
    assert [r.id for r in report.feasible] == ["x", "y", "z"]


def test_no_feasible_scenario():
    scenarios = [make_scenario("a", 0.08, scr=100), make_scenario("b", 0.12, scr=300)]
    with pytest.raises(NoFeasibleScenario) as err:
        optimize(scenarios, ConstraintSet(scr_upper=50))
    assert "scr_upper" in str(err.value)
    assert err.value.report.optimum is None
    report = optimize(scenarios, ConstraintSet(scr_upper=50), raise_if_infeasible=False)
    data = emit_frontier(report)
    assert data.rows == () and data.total is None and "no feasible" in data.note


def test_errors_tagged_with_scenario():
    bad = Scenario("broken", {}, flat_tree([1.0, 2.0], [[1.0, 2.0], [2.0, 1.0]]), IncomeStats())
    with pytest.raises(ScenarioError, match="broken"):
        optimize([bad], ConstraintSet())
    with pytest.raises(ValueError):
        optimize([], ConstraintSet())


def test_emit_frontier_profile():
    rows, _ = load_profile()
    scen = profile_scenario(rows)
    data = emit_frontier(optimize([scen], ConstraintSet()), [scen])
    assert len(data.rows) == 11
    for row, src in zip(data.rows, rows):
        assert row.name == src.name
        assert round(row.capital) == src.allocated_scr
        assert round(row.rorac, 4) == src.expected_rorac
        assert round(row.rorac_std, 3) == src.rorac_std
    assert round(data.total.rorac, 3) == 0.095
    assert round(data.total.rorac_std, 3) == 0.057


def test_emit_frontier_single_lob():
    s = make_scenario("s", 0.05)
    data = emit_frontier(optimize([s], ConstraintSet()), [s])
    assert len(data.rows) == 1
    assert data.rows[0].rorac == data.total.rorac and data.rows[0].capital == data.total.capital


def test_parallel_evaluation_is_deterministic():
    rng = np.random.default_rng(0)
    scenarios = [make_scenario(f"s{k}", float(rng.uniform(-0.1, 0.2)), scr=float(rng.uniform(10, 100))) for k in range(20)]
    a = optimize(scenarios, ConstraintSet(cv_cap=0.5))
    b = optimize(scenarios, ConstraintSet(cv_cap=0.5), workers=4)
    assert a == b


# -- randomized comparison against an independent brute force ------------------


def random_suite(rng):
    n = int(rng.integers(1, 9))
    lobs = ["a", "b", "c"]
    scenarios = []
    for k in range(n):
        scrs = rng.uniform(1, 50, 3)
        if rng.random() < 0.3 and k:
            scrs = scenarios[-1].tree.micro_scrs()  # duplicates exercise tie-breaks
        rho = float(rng.uniform(0, 0.9))
        tree = flat_tree(list(scrs), CorrelationMatrix.constant(3, rho), ids=lobs)
        means = rng.choice([-1.0, 0.5, 1.0, 2.0], 3) * rng.integers(1, 3)
        income = IncomeStats({f"total/{l}": NodeIncome(float(m), float(rng.uniform(0, 2))) for l, m in zip(lobs, means)})
        premiums = {f"total/{l}": float(rng.integers(0, 10)) for l in lobs}
        re = Reinsurance({"program": str(rng.choice(["qs", "xl", "none"]))}, {"retention": float(rng.integers(1, 5)) / 5})
        scenarios.append(Scenario(f"s{int(rng.integers(0, 1000)):03d}_{k}", premiums, tree, income, re))
    c = ConstraintSet(
        scr_lower=float(rng.uniform(0, 30)) if rng.random() < 0.5 else None,
        scr_upper=float(rng.uniform(30, 120)) if rng.random() < 0.5 else None,
        premium_bounds={"total/a": (float(rng.integers(0, 3)), float(rng.integers(6, 11)))} if rng.random() < 0.5 else {},
        cv_cap=float(rng.uniform(0.2, 5)) if rng.random() < 0.3 else None,
        reinsurance=(ReinsuranceRule("ret", "retention", "<=", 0.6),) if rng.random() < 0.4 else (),
        scr_strict=bool(rng.random() < 0.7),
    )
    return scenarios, c


def brute_force(scenarios, c):
    """Filter then argmax, written from the constraint definitions only."""
    best = None
    for s in scenarios:
        r = s.tree.corr.entries
        outer = []
        for m in s.tree.macros:
            v = np.array([u.scr for u in m.micros])
            outer.append(math.sqrt(v @ m.corr.entries @ v))
        outer = np.array(outer)
        total = math.sqrt(outer @ r @ outer)
        m = s.tree.macros[0]
        v = np.array([u.scr for u in m.micros])
        alloc = {f"{m.id}/{u.id}": v[k] * (m.corr.entries @ v)[k] / total for k, u in enumerate(m.micros)}
        rorac = sum(i.mean for i in s.income.values()) / total
        ok = True
        if c.scr_lower is not None:
            ok &= total > c.scr_lower if c.scr_strict else total >= c.scr_lower
        if c.scr_upper is not None:
            ok &= total < c.scr_upper if c.scr_strict else total <= c.scr_upper
        for lob, (lo, hi) in c.premium_bounds.items():
            p = s.premiums.get(lob)
            ok &= p is not None and (lo is None or p > lo) and (hi is None or p < hi)
        if c.cv_cap is not None:
            for path, inc in s.income.items():
                e = inc.mean / alloc[path]
                ok &= e > 0 and (inc.std / alloc[path]) / e < c.cv_cap
        for rule in c.reinsurance:
            ok &= s.reinsurance.params.get(rule.key, math.inf) <= rule.value
        if not ok:
            continue
        key = (-rorac, total, s.id)
        if best is None or key < best[0]:
            best = (key, s.id)
    return None if best is None else best[1]


def run_suites(count, seed):
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(count):
        scenarios, c = random_suite(rng)
        report = optimize(scenarios, c, raise_if_infeasible=False)
        got = report.optimum.id if report.optimum else None
        mismatches += got != brute_force(scenarios, c)
        for family in ("scr", "premium", "cv", "reinsurance"):
            relaxed = optimize(scenarios, c.relaxed(family), raise_if_infeasible=False)
            if report.optimum is not None:
                assert relaxed.optimum.expected_rorac >= report.optimum.expected_rorac
    return mismatches


def test_matches_brute_force():
    assert run_suites(60, seed=2024) == 0


def test_dominated_scenario_does_not_change_optimum():
    scenarios = [make_scenario("a", 0.08), make_scenario("b", 0.12)]
    base = optimize(scenarios, ConstraintSet())
    more = optimize(scenarios + [make_scenario("c", 0.05)], ConstraintSet())
    assert base.optimum.id == more.optimum.id == "b"
