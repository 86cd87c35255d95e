import numpy as np
import pytest

from scralloc.risk_model import CorrelationMatrix, MacroRisk, MicroRisk, RiskTree, flat_tree


def random_corr(rng, dim, nonnegative=False):
    """Random PSD correlation from a Gram matrix of random vectors."""
    a = rng.normal(size=(dim, dim + 2))
    if nonnegative:
        a = np.abs(a)
    c = a @ a.T
    d = np.sqrt(np.diag(c))
    c = c / np.outer(d, d)
    c = (c + c.T) / 2
    np.fill_diagonal(c, 1.0)
    return CorrelationMatrix(c)


def random_tree(rng, max_macros=10, max_micros=10, nonnegative_macro=False, nonnegative_micro=False, zero_prob=0.0):
    n = int(rng.integers(1, max_macros + 1))
    macros = []
    for i in range(n):
        m = int(rng.integers(1, max_micros + 1))
        micros = []
        for j in range(m):
            scr = 0.0 if rng.random() < zero_prob else float(rng.uniform(0.1, 100.0))
            micros.append(MicroRisk(f"u{j}", scr))
        macros.append(MacroRisk(f"M{i}", tuple(micros), random_corr(rng, m, nonnegative_micro)))
    return RiskTree(tuple(macros), random_corr(rng, n, nonnegative_macro))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_risk_tree():
    return flat_tree([3.0, 4.0], [[1.0, 0.5], [0.5, 1.0]])


@pytest.fixture
def nested_tree():
    a = MacroRisk("A", (MicroRisk("a1", 3.0), MicroRisk("a2", 4.0)), CorrelationMatrix.identity(2))
    b = MacroRisk("B", (MicroRisk("b1", 5.0),), CorrelationMatrix.identity(1))
    return RiskTree((a, b), CorrelationMatrix.identity(2))


def nested_total(tree, scrs):
    """Two-level square-root aggregate written directly from the definition (oracle)."""
    scrs = np.asarray(scrs, dtype=float)
    k = 0
    macro = []
    for m in tree.macros:
        s = scrs[k:k + len(m.micros)]
        k += len(m.micros)
        r = m.corr.entries
        macro.append(np.sqrt(max(sum(s[i] * s[j] * r[i, j] for i in range(len(s)) for j in range(len(s))), 0.0)))
    macro = np.array(macro)
    return float(np.sqrt(max(macro @ tree.corr.entries @ macro, 0.0)))


def fd_gradient(tree, rel=1e-6):
    """Central finite differences of :func:`nested_total`; forward at coordinates below one step."""
    s = tree.micro_scrs()
    scale = s.mean() if s.mean() > 0 else 1.0
    out = []
    for k in range(len(s)):
        h = rel * max(s[k], scale)
        up, dn = s.copy(), s.copy()
        up[k] += h
        if s[k] >= h:
            dn[k] -= h
            out.append((nested_total(tree, up) - nested_total(tree, dn)) / (2 * h))
        else:
            out.append((nested_total(tree, up) - nested_total(tree, s)) / h)
    return np.array(out)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
