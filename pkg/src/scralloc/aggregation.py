"""Square-root correlation aggregation of standalone SCRs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .risk_model import DEFAULT_TOLERANCES, CorrelationMatrix, RiskTree

# Standard normal 99.5% quantile at full precision (2.5758293...).
NORMAL_Q995 = NormalDist().inv_cdf(0.995)

_COMPENSATED_DIM = 64


class NegativeRadicand(ArithmeticError):
    """Quadratic form sᵀRs fell below the clamping band (non-PSD correlation)."""

    def __init__(self, value: float, path: str = "") -> None:
        self.value = value
        self.path = path
        where = f" at {path!r}" if path else ""
        super().__init__(f"negative radicand{where}: {value:.12g}")


@dataclass(frozen=True)
class AggregationOutput:
    macro_scrs: tuple[tuple[str, float], ...]
    total_scr: float

    @property
    def macro_vector(self) -> np.ndarray:
        return np.array([v for _, v in self.macro_scrs], dtype=float)

    def macro(self, macro_id: str) -> float:
        return dict(self.macro_scrs)[macro_id]


def quadratic_form(s: np.ndarray, r: np.ndarray) -> float:
    """sᵀ(Rs), with exact-rounded partial sums once the dimension gets large."""
    if s.shape[0] <= _COMPENSATED_DIM:
        return float(s @ (r @ s))
    rs = [math.fsum(row * s) for row in r]
    return math.fsum(np.asarray(rs) * s)


def aggregate_level(scrs, corr, radicand_tol: float = DEFAULT_TOLERANCES.radicand, path: str = "") -> float:
    s = np.asarray(scrs, dtype=float)
    r = corr.entries if isinstance(corr, CorrelationMatrix) else np.asarray(corr, dtype=float)
    if s.ndim != 1 or r.shape != (s.shape[0], s.shape[0]):
        raise ValueError(f"dimension mismatch: {s.shape[0]} SCRs vs correlation {r.shape}")
    if np.any(s < 0):
        raise ValueError("standalone SCRs must be nonnegative")
    q = quadratic_form(s, r)
    if q < 0:
        if q < -radicand_tol * float(s.sum()) ** 2:
            raise NegativeRadicand(q, path)
        return 0.0
    return math.sqrt(q)


def aggregate_tree(tree: RiskTree, radicand_tol: float = DEFAULT_TOLERANCES.radicand) -> AggregationOutput:
    macro_scrs = tuple(
        (m.id, aggregate_level(m.scrs, m.corr, radicand_tol, path=m.id)) for m in tree.macros
    )
    total = aggregate_level([v for _, v in macro_scrs], tree.corr, radicand_tol, path="<total>")
    return AggregationOutput(macro_scrs, total)


def implied_sigma(scr: float) -> float:
    """Standard deviation of a centred normal loss whose 99.5% VaR is ``scr``."""
    if scr < 0:
        raise ValueError("scr must be nonnegative")
    return scr / NORMAL_Q995
