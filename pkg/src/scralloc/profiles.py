"""Risk-return profiles given as allocated capital plus RORAC statistics per LoB.

A profile only states the allocated SCR of each line of business. To push it
through the engine we build a flat tree of independent risks whose Euler
allocations equal those figures: with zero correlation the allocation of risk
k is s_k**2 / S, so s_k = sqrt(A_k * sum(A)) gives allocation A_k and total
sum(A).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from .optimizer import Scenario
from .risk_model import CorrelationMatrix, RiskTree, flat_tree
from .rorac import IncomeStats, NodeIncome


@dataclass(frozen=True)
class LobProfile:
    id: str
    name: str
    expected_rorac: float
    rorac_std: float
    allocated_scr: float


def load_profile(source=None) -> tuple[list[LobProfile], dict]:
    """Rows and the printed totals; defaults to the bundled non-life sample."""
    if source is None:
        text = resources.files("scralloc").joinpath("data/lob_profile.json").read_text(encoding="utf-8")
        doc = json.loads(text)
    elif isinstance(source, dict):
        doc = source
    else:
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    rows = [
        LobProfile(d["id"], d.get("name", d["id"]), float(d["expected_rorac"]), float(d["rorac_std"]), float(d["allocated_scr"]))
        for d in doc["lobs"]
    ]
    return rows, doc.get("total", {})


def independent_tree(allocations: Sequence[float], ids: Sequence[str], names: Sequence[str] | None = None, macro_id: str = "lob") -> RiskTree:
    total = float(sum(allocations))
    scrs = [math.sqrt(a * total) for a in allocations]
    return flat_tree(scrs, CorrelationMatrix.identity(len(scrs)), ids, names, macro_id=macro_id)


def profile_scenario(rows: Sequence[LobProfile], scenario_id: str = "profile", macro_id: str = "lob") -> Scenario:
    tree = independent_tree([r.allocated_scr for r in rows], [r.id for r in rows], [r.name for r in rows], macro_id)
    income = IncomeStats(
        {f"{macro_id}/{r.id}": NodeIncome(r.expected_rorac * r.allocated_scr, r.rorac_std * r.allocated_scr) for r in rows}
    )
    return Scenario(scenario_id, {}, tree, income)
