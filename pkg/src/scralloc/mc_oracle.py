"""Monte Carlo cross-check of the closed-form SCR and Euler allocations.

Micro losses are modelled as centred jointly normal variables with
sigma = SCR / z_0.995. The portfolio VaR is an empirical quantile and the
Euler contributions are conditional means E[Y_ix | Y ~ VaR] estimated on a
narrow quantile window around the VaR level.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .aggregation import implied_sigma
from .allocation import allocate
from .risk_model import DEFAULT_TOLERANCES, RiskTree, repair_tree

log = logging.getLogger(__name__)

CHUNK = 1 << 18


class NotPsd(ValueError):
    pass


class EmptyWindow(RuntimeError):
    pass


@dataclass(frozen=True)
class McConfig:
    sample_count: int = 1_000_000
    seed: int = 20240101
    var_level: float = 0.995
    window_fraction: float = 0.001
    psd_repair: str = "off"  # "off" | "clip-eigenvalues"
    cross_block: str = "nested"  # "nested" | "uniform"
    min_window: int = 100
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.var_level < 1:
            raise ValueError("var_level must lie in (0, 1)")
        if not 0 < self.window_fraction <= 0.05:
            raise ValueError("window_fraction must lie in (0, 0.05]")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        if self.psd_repair not in ("off", "clip-eigenvalues"):
            raise ValueError(f"unknown psd_repair {self.psd_repair!r}")
        if self.cross_block not in ("nested", "uniform"):
            raise ValueError(f"unknown cross_block {self.cross_block!r}")


@dataclass(frozen=True)
class McEstimate:
    var_estimate: float
    var_se: float
    contributions: np.ndarray = field(repr=False)
    contribution_se: np.ndarray = field(repr=False)
    sample_count: int = 0
    window_count: int = 0
    seed: int = 0
    paths: tuple[str, ...] = ()

    @property
    def window_mean(self) -> float:
        return float(self.contributions.sum())


def correlation_structure(tree: RiskTree, cross_block: str = "nested") -> np.ndarray:
    """Correlation between all micro losses.

    Within a macro the micro correlation is used as is. Across macros i != w,
    "nested" sets corr(ix, wy) = rho_iw * c_ix * c_wy with c_ix the correlation
    between micro ix and its macro aggregate; this is the covariance of a
    one-factor-per-macro model and reproduces the two-level square-root formula
    exactly. "uniform" fills the cross block with rho_iw.
    """
    sizes = [len(m.micros) for m in tree.macros]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n = int(offsets[-1])
    c = np.zeros((n, n))
    loadings = []
    for k, macro in enumerate(tree.macros):
        a, b = offsets[k], offsets[k + 1]
        r = macro.corr.entries
        c[a:b, a:b] = r
        s = np.array([implied_sigma(u.scr) for u in macro.micros])
        var_i = float(s @ r @ s)
        if var_i > 0:
            loadings.append((r @ s) / np.sqrt(var_i))
        else:
            loadings.append(np.ones(len(s)) / np.sqrt(max(len(s), 1)))
    macro_r = tree.corr.entries
    for i in range(len(sizes)):
        for w in range(len(sizes)):
            if i == w:
                continue
            block = (
                macro_r[i, w] * np.outer(loadings[i], loadings[w])
                if cross_block == "nested"
                else np.full((sizes[i], sizes[w]), macro_r[i, w])
            )
            c[offsets[i]:offsets[i + 1], offsets[w]:offsets[w + 1]] = block
    return c


def build_covariance(tree: RiskTree, config: McConfig | None = None) -> np.ndarray:
    config = config or McConfig()
    if config.psd_repair == "clip-eigenvalues":
        tree = repair_tree(tree)
    corr = correlation_structure(tree, config.cross_block)
    lam = float(np.linalg.eigvalsh(corr)[0]) if corr.size else 0.0
    if lam < -DEFAULT_TOLERANCES.psd:
        raise NotPsd(f"joint correlation is not PSD (min eigenvalue {lam:.6g}); enable psd repair")
    sigma = np.array([implied_sigma(u.scr) for *_, u in tree.iter_micros()])
    return corr * np.outer(sigma, sigma)


def _factor(cov: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(cov)
    return vec * np.sqrt(np.clip(lam, 0.0, None))


def _chunks(config: McConfig) -> list[tuple[int, np.random.Generator]]:
    """Deterministic per-chunk substreams; results do not depend on how chunks are scheduled."""
    n_chunks = -(-config.sample_count // CHUNK)
    seqs = np.random.SeedSequence(config.seed).spawn(n_chunks)
    sizes = [CHUNK] * (n_chunks - 1) + [config.sample_count - CHUNK * (n_chunks - 1)]
    return [(size, np.random.Generator(np.random.Philox(seq))) for size, seq in zip(sizes, seqs)]


def _draw(size: int, rng: np.random.Generator, factor: np.ndarray) -> np.ndarray:
    z = rng.standard_normal((size, factor.shape[1]))
    return z @ factor.T


def _portfolio_sums(factor: np.ndarray, config: McConfig) -> np.ndarray:
    def one(chunk: tuple[int, np.random.Generator]) -> np.ndarray:
        return _draw(chunk[0], chunk[1], factor).sum(axis=1)

    chunks = _chunks(config)
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            return np.concatenate(list(pool.map(one, chunks)))
    return np.concatenate([one(c) for c in chunks])


def _var_from_sums(sums: np.ndarray, config: McConfig) -> tuple[float, float, float, float]:
    n = sums.shape[0]
    p = config.var_level
    half = config.window_fraction / 2
    lo_p, hi_p = max(p - half, 0.0), min(p + half, 1.0)
    ks = sorted({min(max(int(np.ceil(q * n)) - 1, 0), n - 1) for q in (lo_p, p, hi_p)})
    part = np.partition(sums, ks)
    var = _quantile_at(part, p, n)
    lo, hi = _quantile_at(part, lo_p, n), _quantile_at(part, hi_p, n)
    if hi > lo:
        density = (hi_p - lo_p) / (hi - lo)
        se = np.sqrt(p * (1 - p) / n) / density
    else:
        se = 0.0
    return var, float(se), lo, hi


def _quantile_at(part: np.ndarray, p: float, n: int) -> float:
    k = min(max(int(np.ceil(p * n)) - 1, 0), n - 1)
    return float(part[k])


def simulate_var(cov: np.ndarray, config: McConfig | None = None) -> tuple[float, float]:
    """Empirical VaR of the summed losses and its order-statistic standard error."""
    config = config or McConfig()
    factor = _factor(np.asarray(cov, dtype=float))
    var, se, _, _ = _var_from_sums(_portfolio_sums(factor, config), config)
    return var, se


def estimate_contributions(cov: np.ndarray, config: McConfig | None = None, paths: tuple[str, ...] = ()) -> McEstimate:
    config = config or McConfig()
    cov = np.asarray(cov, dtype=float)
    factor = _factor(cov)
    sums = _portfolio_sums(factor, config)
    var, se, lo, hi = _var_from_sums(sums, config)
    dim = cov.shape[0]
    total = np.zeros(dim)
    total_sq = np.zeros(dim)
    count = 0
    # second pass regenerates each chunk from its own substream
    for size, rng in _chunks(config):
        y = _draw(size, rng, factor)
        s = y.sum(axis=1)
        sel = y[(s >= lo) & (s <= hi)]
        total += sel.sum(axis=0)
        total_sq += (sel * sel).sum(axis=0)
        count += sel.shape[0]
    if count < config.min_window:
        raise EmptyWindow(f"only {count} samples in the VaR window (need {config.min_window})")
    mean = total / count
    variance = np.maximum(total_sq / count - mean * mean, 0.0)
    csd = np.sqrt(variance / max(count - 1, 1))
    log.debug("mc window: %d samples in [%g, %g]", count, lo, hi)
    return McEstimate(var, se, mean, csd, config.sample_count, count, config.seed, paths)


def simulate_tree(tree: RiskTree, config: McConfig | None = None) -> McEstimate:
    config = config or McConfig()
    cov = build_covariance(tree, config)
    return estimate_contributions(cov, config, tuple(tree.micro_paths()))


@dataclass(frozen=True)
class ComparisonRow:
    path: str
    closed_form: float
    monte_carlo: float
    se: float

    @property
    def z(self) -> float:
        diff = self.monte_carlo - self.closed_form
        if self.se == 0:
            return 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
        return diff / self.se

    @property
    def flagged(self) -> bool:
        return abs(self.z) > 4.0


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    estimate: McEstimate
    config: McConfig

    @property
    def flagged(self) -> list[ComparisonRow]:
        return [r for r in self.rows if r.flagged]


def compare_with_closed_form(tree: RiskTree, config: McConfig | None = None) -> ComparisonReport:
    """Closed-form total/macro/micro allocations against their MC estimates.

    The closed form is scaled to the configured VaR level through the normal
    quantile ratio, so a level other than 99.5% is compared consistently.
    """
    config = config or McConfig()
    if config.psd_repair == "clip-eigenvalues":
        tree = repair_tree(tree)
    est = simulate_tree(tree, config)
    scale = NormalDist().inv_cdf(config.var_level) / NormalDist().inv_cdf(0.995)
    alloc = allocate(tree)
    rows = [ComparisonRow("<total>", alloc.total_scr * scale, est.var_estimate, est.var_se)]
    sizes = [len(m.micros) for m in tree.macros]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for k, m in enumerate(alloc.macros):
        a, b = offsets[k], offsets[k + 1]
        mc = float(est.contributions[a:b].sum())
        se = float(np.sqrt((est.contribution_se[a:b] ** 2).sum()))
        rows.append(ComparisonRow(m.id, m.allocated * scale, mc, se))
    for u, mc, se in zip(alloc.micros, est.contributions, est.contribution_se):
        rows.append(ComparisonRow(u.path, u.allocated * scale, float(mc), float(se)))
    return ComparisonReport(tuple(rows), est, config)
