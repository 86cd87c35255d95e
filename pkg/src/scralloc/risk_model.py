"""Two-level risk hierarchy: micro-risks grouped under macro-risks.

Every node carries a standalone SCR and each level carries its own
correlation matrix. Objects are frozen after construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    symmetry: float = 1e-12
    psd: float = 1e-10
    eigenvalue: float = 1e-9
    radicand: float = 1e-9


DEFAULT_TOLERANCES = Tolerances()


class CorrelationMatrix:
    """Dense square correlation matrix (read-only copy of the input)."""

    __slots__ = ("_entries",)

    def __init__(self, entries) -> None:
        arr = np.array(entries, dtype=float, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"correlation must be square, got shape {arr.shape}")
        arr.setflags(write=False)
        self._entries = arr

    @classmethod
    def identity(cls, dim: int) -> "CorrelationMatrix":
        return cls(np.eye(dim))

    @classmethod
    def constant(cls, dim: int, rho: float) -> "CorrelationMatrix":
        m = np.full((dim, dim), float(rho))
        np.fill_diagonal(m, 1.0)
        return cls(m)

    @property
    def dim(self) -> int:
        return self._entries.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    def permuted(self, order: Sequence[int]) -> "CorrelationMatrix":
        idx = np.asarray(order)
        return CorrelationMatrix(self._entries[np.ix_(idx, idx)])

    def is_psd(self, tol: float = DEFAULT_TOLERANCES.psd) -> bool:
        return min_eigenvalue(self) >= -tol

    def tolist(self) -> list[list[float]]:
        return self._entries.tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CorrelationMatrix):
            return NotImplemented
        return self._entries.shape == other._entries.shape and bool(
            np.array_equal(self._entries, other._entries)
        )

    def __hash__(self) -> int:
        return hash(self._entries.tobytes())

    def __repr__(self) -> str:
        return f"CorrelationMatrix({self._entries.tolist()!r})"


@dataclass(frozen=True)
class MicroRisk:
    id: str
    scr: float
    name: str = ""


@dataclass(frozen=True)
class MacroRisk:
    id: str
    micros: tuple[MicroRisk, ...]
    corr: CorrelationMatrix
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "micros", tuple(self.micros))

    @property
    def scrs(self) -> np.ndarray:
        return np.array([m.scr for m in self.micros], dtype=float)

    def micro(self, micro_id: str) -> MicroRisk:
        for m in self.micros:
            if m.id == micro_id:
                return m
        raise KeyError(f"{self.id}/{micro_id}")


@dataclass(frozen=True)
class RiskTree:
    macros: tuple[MacroRisk, ...]
    corr: CorrelationMatrix
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "macros", tuple(self.macros))

    def macro(self, macro_id: str) -> MacroRisk:
        for m in self.macros:
            if m.id == macro_id:
                return m
        raise KeyError(macro_id)

    def micro_paths(self) -> list[str]:
        return [f"{m.id}/{u.id}" for m in self.macros for u in m.micros]

    def iter_micros(self) -> Iterator[tuple[int, int, MacroRisk, MicroRisk]]:
        for i, macro in enumerate(self.macros):
            for x, micro in enumerate(macro.micros):
                yield i, x, macro, micro

    def micro_scrs(self) -> np.ndarray:
        """Standalone micro SCRs flattened in tree order."""
        return np.array([u.scr for *_, u in self.iter_micros()], dtype=float)

    def with_micro_scrs(self, scrs: Sequence[float]) -> "RiskTree":
        """Same structure with the flattened micro SCRs replaced."""
        values = iter(float(v) for v in scrs)
        macros = []
        for macro in self.macros:
            micros = tuple(MicroRisk(u.id, next(values), u.name) for u in macro.micros)
            macros.append(MacroRisk(macro.id, micros, macro.corr, macro.name))
        return RiskTree(tuple(macros), self.corr, self.name)

    def scaled(self, path: str, factor: float) -> "RiskTree":
        """Scale the standalone SCR of one node (macro or micro) by ``factor``."""
        mask = node_mask(self, path)
        scrs = self.micro_scrs()
        scrs[mask] *= factor
        return self.with_micro_scrs(scrs)

    def permuted(self, order: Sequence[int]) -> "RiskTree":
        macros = tuple(self.macros[k] for k in order)
        return RiskTree(macros, self.corr.permuted(order), self.name)


def node_mask(tree: RiskTree, path: str) -> np.ndarray:
    """Boolean mask over flattened micro coordinates covered by ``path``."""
    macro_id, _, micro_id = path.partition("/")
    mask = np.zeros(sum(len(m.micros) for m in tree.macros), dtype=bool)
    found = False
    k = 0
    for macro in tree.macros:
        for micro in macro.micros:
            if macro.id == macro_id and (not micro_id or micro.id == micro_id):
                mask[k] = True
                found = True
            k += 1
    if not found:
        raise KeyError(f"unknown node path {path!r}")
    return mask


def flat_tree(
    scrs: Sequence[float],
    corr,
    ids: Sequence[str] | None = None,
    names: Sequence[str] | None = None,
    macro_id: str = "total",
    name: str = "",
) -> RiskTree:
    """One macro holding every risk as a micro; handy for single-level work."""
    ids = list(ids) if ids is not None else [f"r{k + 1}" for k in range(len(scrs))]
    names = list(names) if names is not None else [""] * len(scrs)
    micros = tuple(MicroRisk(i, float(s), n) for i, s, n in zip(ids, scrs, names))
    if not isinstance(corr, CorrelationMatrix):
        corr = CorrelationMatrix(corr)
    return RiskTree((MacroRisk(macro_id, micros, corr),), CorrelationMatrix.identity(1), name)


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str
    message: str
    severity: str = "error"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def psd(self) -> bool:
        return not any(v.rule == "not_psd" for v in self.violations)

    def __bool__(self) -> bool:
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


def _check_corr(path: str, corr: CorrelationMatrix, dim: int, tol: Tolerances) -> list[Violation]:
    out: list[Violation] = []
    a = corr.entries
    if corr.dim != dim:
        out.append(Violation(path, "dimension_mismatch", f"correlation is {corr.dim}x{corr.dim}, expected {dim}x{dim}"))
        return out
    if not np.all(np.isfinite(a)):
        out.append(Violation(path, "non_finite", "correlation contains non-finite entries"))
        return out
    if np.any(np.abs(a - a.T) > tol.symmetry):
        out.append(Violation(path, "not_symmetric", "correlation is not symmetric"))
    if np.any(np.diag(a) != 1.0):
        out.append(Violation(path, "diagonal_not_one", "correlation diagonal must be exactly 1"))
    if np.any(np.abs(a) > 1.0):
        worst = float(a.flat[np.argmax(np.abs(a))])
        out.append(Violation(path, "entry_out_of_range", f"entry out of [-1,1]: {worst}"))
    if not out:
        lam = min_eigenvalue(corr, tol)
        if lam < -tol.psd:
            out.append(Violation(path, "not_psd", f"not PSD: min eigenvalue {lam:.6g}", "warning"))
    return out


def validate_tree(tree: RiskTree, tol: Tolerances = DEFAULT_TOLERANCES) -> ValidationReport:
    """Collect every invariant violation; never raises."""
    found: list[Violation] = []
    if not tree.macros:
        found.append(Violation("", "empty_tree", "tree has no macro-risks"))
    seen: set[str] = set()
    for macro in tree.macros:
        if macro.id in seen:
            found.append(Violation(macro.id, "duplicate_id", f"duplicate macro id {macro.id!r}"))
        seen.add(macro.id)
        if not macro.micros:
            found.append(Violation(macro.id, "empty_macro", "macro-risk has no micro-risks"))
        micro_seen: set[str] = set()
        for micro in macro.micros:
            path = f"{macro.id}/{micro.id}"
            if micro.id in micro_seen:
                found.append(Violation(path, "duplicate_id", f"duplicate micro id {micro.id!r}"))
            micro_seen.add(micro.id)
            if not np.isfinite(micro.scr):
                found.append(Violation(path, "non_finite", "SCR is not finite"))
            elif micro.scr < 0:
                found.append(Violation(path, "negative_scr", f"SCR must be >= 0, got {micro.scr}"))
        if macro.micros:
            found.extend(_check_corr(macro.id, macro.corr, len(macro.micros), tol))
    if tree.macros:
        found.extend(_check_corr("", tree.corr, len(tree.macros), tol))
    return ValidationReport(tuple(found))


def min_eigenvalue(corr: CorrelationMatrix | np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    a = corr.entries if isinstance(corr, CorrelationMatrix) else np.asarray(corr, dtype=float)
    if np.any(np.abs(a - a.T) > tol.symmetry):
        raise ValueError("min_eigenvalue requires a symmetric matrix")
    return float(np.linalg.eigvalsh(a)[0])


def clip_to_psd(corr: CorrelationMatrix, floor: float = 0.0) -> CorrelationMatrix:
    """Nearest-PSD repair by eigenvalue clipping followed by unit-diagonal rescaling."""
    a = corr.entries
    lam, vec = np.linalg.eigh((a + a.T) / 2)
    if lam[0] >= floor:
        return corr
    fixed = (vec * np.maximum(lam, floor)) @ vec.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    fixed = (fixed + fixed.T) / 2
    np.fill_diagonal(fixed, 1.0)
    return CorrelationMatrix(np.clip(fixed, -1.0, 1.0))


def repair_tree(tree: RiskTree, floor: float = 0.0) -> RiskTree:
    """Clip every correlation matrix of the tree to PSD."""
    macros = tuple(MacroRisk(m.id, m.micros, clip_to_psd(m.corr, floor), m.name) for m in tree.macros)
    return RiskTree(macros, clip_to_psd(tree.corr, floor), tree.name)


def tree_is_psd(tree: RiskTree, tol: Tolerances = DEFAULT_TOLERANCES) -> bool:
    return all(m.corr.is_psd(tol.psd) for m in tree.macros) and tree.corr.is_psd(tol.psd)
