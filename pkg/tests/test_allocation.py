import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scralloc.aggregation import aggregate_tree
from scralloc.allocation import (
    ZeroMacroScr,
    ZeroTotalScr,
    allocate,
    allocate_macro,
    allocate_micro,
    diversification_report,
    gradient,
)
from scralloc.properties import subset_undercut, symmetric_pairs
from scralloc.risk_model import CorrelationMatrix, MacroRisk, MicroRisk, RiskTree, flat_tree

from conftest import fd_gradient, random_corr, random_tree


def test_macro_example_two_risks():
    tree = RiskTree(
        (
            MacroRisk("a", (MicroRisk("x", 3.0),), CorrelationMatrix.identity(1)),
            MacroRisk("b", (MicroRisk("x", 4.0),), CorrelationMatrix.identity(1)),
        ),
        CorrelationMatrix.constant(2, 0.5),
    )
    res = allocate_macro(tree)
    alloc = [m.allocated for m in res]
    assert alloc == pytest.approx([2.46598, 3.61678], abs=1e-5)
    assert alloc == pytest.approx([15 / math.sqrt(37), 22 / math.sqrt(37)], rel=1e-12)
    assert sum(alloc) == pytest.approx(math.sqrt(37), rel=1e-12)
    # Euler contribution equals SCR_i times a central finite difference
    fd = fd_gradient(tree)
    assert alloc == pytest.approx([3 * fd[0], 4 * fd[1]], rel=1e-6)


def test_single_live_risk_takes_everything():
    for rho in (-0.4, 0.0, 0.7):
        tree = flat_tree([5.0, 0.0], CorrelationMatrix.constant(2, rho))
        res = allocate(tree)
        assert res.micro_vector() == pytest.approx([5.0, 0.0])


def test_comonotone_no_diversification():
    tree = flat_tree([3.0, 4.0], CorrelationMatrix.constant(2, 1.0))
    res = allocate(tree)
    assert res.micro_vector() == pytest.approx([3.0, 4.0], rel=1e-15)
    assert res.macros[0].ratio == 1.0


def test_micro_example_nested(nested_tree):
    res = allocate(nested_tree)
    a = res.macros[0]
    assert a.ratio == pytest.approx(0.7071068, abs=1e-7)
    assert a.allocated == pytest.approx(3.5355339, abs=1e-7)
    micro = res.micro_vector()
    assert micro[:2] == pytest.approx([1.2727922, 2.2627417], abs=1e-7)
    fd = fd_gradient(nested_tree)
    assert micro == pytest.approx(nested_tree.micro_scrs() * fd, rel=1e-6)
    assert micro[:2].sum() == pytest.approx(a.allocated, rel=1e-12)


def test_degenerate_single_micro():
    res = allocate(flat_tree([7.25], [[1.0]]))
    assert res.micro_vector() == [7.25]
    assert gradient(flat_tree([7.25], [[1.0]])) == pytest.approx([1.0])


def test_gradient_pythagorean():
    assert gradient(flat_tree([3.0, 4.0], np.eye(2))) == pytest.approx([0.6, 0.8], rel=1e-15)


def test_allocate_micro_accepts_precomputed_inputs(nested_tree):
    agg = aggregate_tree(nested_tree)
    macro = allocate_macro(nested_tree, agg)
    assert allocate_micro(nested_tree, agg, macro) == allocate_micro(nested_tree)


def test_zero_tree_allocates_nothing():
    res = allocate(flat_tree([0.0, 0.0], np.eye(2)))
    assert res.total_scr == 0.0
    assert res.micro_vector().tolist() == [0.0, 0.0]


def test_zero_total_with_live_macro_raises():
    tree = RiskTree(
        (
            MacroRisk("a", (MicroRisk("x", 1.0),), CorrelationMatrix.identity(1)),
            MacroRisk("b", (MicroRisk("x", 1.0),), CorrelationMatrix.identity(1)),
        ),
        CorrelationMatrix([[1.0, -1.0], [-1.0, 1.0]]),
    )
    with pytest.raises(ZeroTotalScr):
        allocate(tree)


def test_zero_macro_with_live_micro_raises():
    macro = MacroRisk("a", (MicroRisk("x", 1.0), MicroRisk("y", 1.0)), CorrelationMatrix([[1, -1], [-1, 1]]))
    other = MacroRisk("b", (MicroRisk("z", 2.0),), CorrelationMatrix.identity(1))
    with pytest.raises(ZeroMacroScr):
        allocate(RiskTree((macro, other), CorrelationMatrix.identity(2)))


def test_zero_macro_ratio_uses_gradient_factor():
    a = MacroRisk("a", (MicroRisk("x", 0.0),), CorrelationMatrix.identity(1))
    b = MacroRisk("b", (MicroRisk("y", 4.0),), CorrelationMatrix.identity(1))
    res = allocate(RiskTree((a, b), CorrelationMatrix.constant(2, 0.25)))
    assert res.macros[0].allocated == 0.0
    assert res.macros[0].ratio == pytest.approx(0.25)
    assert res.macros[1].allocated == 4.0


def test_negative_allocation_is_kept():
    tree = flat_tree([1.0, 5.0], CorrelationMatrix.constant(2, -0.5))
    res = allocate(tree)
    assert res.micro_vector()[0] < 0
    assert res.micro_vector().sum() == pytest.approx(res.total_scr, rel=1e-12)


def test_diversification_report():
    res = allocate(flat_tree([3.0, 4.0], CorrelationMatrix.constant(2, 0.5)))
    rep = diversification_report(res)
    assert rep.total_diversification == 0.0  # one macro: no macro-level diversification
    micro_delta = sum(r.delta for r in rep.rows if r.level == "micro")
    assert micro_delta == pytest.approx(7 - math.sqrt(37), abs=1e-7)
    assert micro_delta == pytest.approx(0.9172375, abs=1e-7)

    two = RiskTree(
        (
            MacroRisk("a", (MicroRisk("x", 3.0),), CorrelationMatrix.identity(1)),
            MacroRisk("b", (MicroRisk("x", 4.0),), CorrelationMatrix.identity(1)),
        ),
        CorrelationMatrix.constant(2, 0.5),
    )
    assert diversification_report(allocate(two)).total_diversification == pytest.approx(0.9172375, abs=1e-7)
    ones = diversification_report(allocate(flat_tree([3.0, 4.0, 1.0], CorrelationMatrix.constant(3, 1.0))))
    assert all(abs(r.delta) < 1e-12 for r in ones.rows)
    single = diversification_report(allocate(flat_tree([2.0], [[1.0]])))
    assert all(r.delta == 0.0 for r in single.rows)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_full_allocation_both_levels(seed):
    tree = random_tree(np.random.default_rng(seed), max_macros=20, max_micros=20)
    res = allocate(tree)
    assert res.macro_vector().sum() == pytest.approx(res.total_scr, rel=1e-9)
    micro = res.micro_vector()
    k = 0
    for m in res.macros:
        n = len(tree.macro(m.id).micros)
        assert micro[k:k + n].sum() == pytest.approx(m.allocated, rel=1e-9, abs=1e-9 * res.total_scr)
        k += n


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_euler_gradient_matches_fd(seed):
    tree = random_tree(np.random.default_rng(seed), max_macros=6, max_micros=6)
    g = gradient(tree)
    fd = fd_gradient(tree)
    assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(g))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_scale_equivariance(seed, lam):
    tree = random_tree(np.random.default_rng(seed), max_macros=6, max_micros=6)
    base = allocate(tree)
    scaled = allocate(tree.with_micro_scrs(lam * tree.micro_scrs()))
    assert scaled.micro_vector() == pytest.approx(lam * base.micro_vector(), rel=1e-12, abs=1e-12 * lam * base.total_scr)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_micro_allocation_is_scr_times_gradient(seed):
    tree = random_tree(np.random.default_rng(seed), max_macros=6, max_micros=6)
    res = allocate(tree)
    expected = tree.micro_scrs() * gradient(tree)
    assert res.micro_vector() == pytest.approx(expected, rel=1e-12, abs=1e-12 * res.total_scr)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_marginal_no_undercut_and_ratio_bounds(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_macros=6, max_micros=6)
    res = allocate(tree)
    assert all(m.allocated <= m.standalone + 1e-9 for m in res.macros)
    assert all(u.allocated <= u.standalone + 1e-9 for u in res.micros)
    nonneg = random_tree(rng, max_macros=6, max_micros=6, nonnegative_macro=True, nonnegative_micro=True)
    assert all(-1e-12 <= m.ratio <= 1 + 1e-12 for m in allocate(nonneg).macros)
    rep = diversification_report(allocate(nonneg))
    assert all(r.delta >= -1e-9 for r in rep.rows)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_subset_no_undercut(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, max_macros=6, max_micros=6, nonnegative_macro=True)
    for _ in range(5):
        mask = rng.random(tree.micro_scrs().shape[0]) < 0.5
        assert subset_undercut(tree, mask) <= 1e-9 * tree.micro_scrs().sum()


def test_symmetry_restated():
    # risks 0 and 1 share SCR and correlation rows against the rest
    corr = np.array([[1.0, 0.3, 0.5, 0.1], [0.3, 1.0, 0.5, 0.1], [0.5, 0.5, 1.0, 0.2], [0.1, 0.1, 0.2, 1.0]])
    scrs = [4.0, 4.0, 7.0, 2.0]
    assert (0, 1) in symmetric_pairs(corr, scrs)
    res = allocate(flat_tree(scrs, corr))
    v = res.micro_vector()
    assert v[0] == pytest.approx(v[1], rel=1e-15)
