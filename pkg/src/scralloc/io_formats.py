"""JSON input documents, JSON/CSV reports and the SVG risk-return scatter.

Every writer is deterministic: fixed key order, ``%.12g`` floats in CSV,
shortest round-trip floats in JSON and a fixed SVG preamble.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .aggregation import AggregationOutput
from .allocation import AllocationResult, DiversificationReport
from .mc_oracle import ComparisonReport
from .optimizer import (
    ConstraintSet,
    FrontierDataset,
    OptimizationReport,
    Reinsurance,
    ReinsuranceRule,
    Scenario,
)
from .risk_model import CorrelationMatrix, MacroRisk, MicroRisk, RiskTree, validate_tree
from .rorac import CompatibilityVerdict, IncomeStats, NodeIncome, RoracReport


class ParseError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None) -> None:
        self.path = path
        self.line = line
        self.message = message
        where = path or "<document>"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}")


class SchemaError(ParseError):
    pass


class NonFiniteNumber(ParseError):
    pass


class DimensionMismatch(ParseError):
    pass


# -- reading ------------------------------------------------------------------


def load_document(source: str | Path | Mapping) -> Any:
    """Accept a mapping, a JSON string, or a path to a JSON file."""
    if isinstance(source, Mapping):
        return source
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith(("{", "["))):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("", exc.msg, exc.lineno) from exc


def _obj(doc: Any, path: str) -> Mapping:
    if not isinstance(doc, Mapping):
        raise SchemaError(path, "expected an object")
    return doc


def _field(doc: Mapping, key: str, path: str, kind=None, default: Any = ...) -> Any:
    if key not in doc:
        if default is ...:
            raise SchemaError(f"{path}.{key}" if path else key, "missing field")
        return default
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}" if path else key, f"expected {getattr(kind, '__name__', kind)}")
    return value


def _number(value: Any, path: str, allow_none: bool = False) -> float | None:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {value!r}")
    v = float(value)
    if math.isnan(v) or (math.isinf(v) and not allow_none):
        raise NonFiniteNumber(path, f"non-finite number {value!r}")
    return v


def _matrix(value: Any, dim: int, path: str) -> CorrelationMatrix:
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise SchemaError(path, "correlation must be a list of rows")
    if len(value) != dim or any(len(r) != dim for r in value):
        shape = f"{len(value)}x{max((len(r) for r in value), default=0)}"
        raise DimensionMismatch(path, f"correlation is {shape}, expected {dim}x{dim}")
    rows = [[_number(x, f"{path}[{i}][{j}]") for j, x in enumerate(r)] for i, r in enumerate(value)]
    return CorrelationMatrix(rows)


def parse_tree(document: Any, check: bool = True) -> RiskTree:
    doc = _obj(load_document(document), "")
    macros_doc = _field(doc, "macros", "", list)
    if not macros_doc:
        raise SchemaError("macros", "at least one macro-risk is required")
    macros = []
    for i, md in enumerate(macros_doc):
        mp = f"macros[{i}]"
        md = _obj(md, mp)
        micros_doc = _field(md, "micros", mp, list)
        if not micros_doc:
            raise SchemaError(f"{mp}.micros", "at least one micro-risk is required")
        micros = []
        for j, ud in enumerate(micros_doc):
            up = f"{mp}.micros[{j}]"
            ud = _obj(ud, up)
            micros.append(
                MicroRisk(
                    str(_field(ud, "id", up, str)),
                    _number(_field(ud, "scr", up), f"{up}.scr"),
                    str(_field(ud, "name", up, str, "")),
                )
            )
        if "correlation" in md:
            corr = _matrix(md["correlation"], len(micros), f"{mp}.correlation")
        elif len(micros) == 1:
            corr = CorrelationMatrix.identity(1)
        else:
            raise SchemaError(f"{mp}.correlation", "missing field")
        macros.append(MacroRisk(str(_field(md, "id", mp, str)), tuple(micros), corr, str(_field(md, "name", mp, str, ""))))
    if "correlation" in doc:
        corr = _matrix(doc["correlation"], len(macros), "correlation")
    elif len(macros) == 1:
        corr = CorrelationMatrix.identity(1)
    else:
        raise SchemaError("correlation", "missing field")
    tree = RiskTree(tuple(macros), corr, str(_field(doc, "name", "", str, "")))
    if check:
        errors = validate_tree(tree).errors
        if errors:
            first = errors[0]
            raise SchemaError(first.path, "; ".join(f"{e.path}: {e.message}" for e in errors))
    return tree


def parse_income(document: Any) -> IncomeStats:
    doc = _obj(load_document(document), "")
    nodes = _field(doc, "nodes", "", list)
    out = IncomeStats()
    for k, nd in enumerate(nodes):
        p = f"nodes[{k}]"
        nd = _obj(nd, p)
        path = str(_field(nd, "path", p, str))
        if path in out:
            raise SchemaError(p, f"duplicate income node {path!r}")
        std = nd.get("std")
        std = None if std is None else _number(std, f"{p}.std")
        if std is not None and std < 0:
            raise SchemaError(f"{p}.std", "must be >= 0")
        out[path] = NodeIncome(_number(_field(nd, "mean", p), f"{p}.mean"), std)
    return out


def parse_scenarios(document: Any) -> list[Scenario]:
    doc = load_document(document)
    items = doc.get("scenarios") if isinstance(doc, Mapping) else doc
    if not isinstance(items, list):
        raise SchemaError("scenarios", "expected a list")
    if not items:
        raise SchemaError("scenarios", "at least one scenario is required")
    out = []
    for k, sd in enumerate(items):
        p = f"scenarios[{k}]"
        sd = _obj(sd, p)
        premiums_doc = _obj(_field(sd, "premiums", p, default={}), f"{p}.premiums")
        premiums = {str(lob): _number(v, f"{p}.premiums.{lob}") for lob, v in premiums_doc.items()}
        for lob, v in premiums.items():
            if v < 0:
                raise SchemaError(f"{p}.premiums.{lob}", "premium must be >= 0")
        re_doc = _obj(_field(sd, "reinsurance", p, default={}), f"{p}.reinsurance")
        tags = {str(k2): str(v) for k2, v in _obj(re_doc.get("tags", {}), f"{p}.reinsurance.tags").items()}
        params = {
            str(k2): _number(v, f"{p}.reinsurance.params.{k2}")
            for k2, v in _obj(re_doc.get("params", {}), f"{p}.reinsurance.params").items()
        }
        try:
            tree = parse_tree(_field(sd, "tree", p))
            income = parse_income(_field(sd, "income", p))
        except ParseError as exc:
            raise type(exc)(f"{p}.{exc.path}" if exc.path else p, exc.message, exc.line) from exc
        out.append(Scenario(str(_field(sd, "id", p, str)), premiums, tree, income, Reinsurance(tags, params)))
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise SchemaError("scenarios", "scenario ids must be unique")
    return out


def parse_constraints(document: Any) -> ConstraintSet:
    doc = _obj(load_document(document), "")
    scr = _obj(doc.get("scr", {}), "scr")
    premium_doc = _obj(doc.get("premium", {}), "premium")
    premium = {}
    for lob, b in premium_doc.items():
        b = _obj(b, f"premium.{lob}")
        premium[str(lob)] = (
            _number(b.get("lower"), f"premium.{lob}.lower", allow_none=True),
            _number(b.get("upper"), f"premium.{lob}.upper", allow_none=True),
        )
    rules = []
    for k, rd in enumerate(doc.get("reinsurance", [])):
        p = f"reinsurance[{k}]"
        rd = _obj(rd, p)
        try:
            rules.append(
                ReinsuranceRule(str(_field(rd, "name", p, str)), str(_field(rd, "key", p, str)), str(_field(rd, "op", p, str)), _field(rd, "value", p))
            )
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise SchemaError(p, str(exc)) from exc
    cv_caps = {str(k): _number(v, f"cv_caps.{k}") for k, v in _obj(doc.get("cv_caps", {}), "cv_caps").items()}
    strict = scr.get("strict", True)
    if not isinstance(strict, bool):
        raise SchemaError("scr.strict", "expected a boolean")
    try:
        return ConstraintSet(
            scr_lower=_number(scr.get("lower"), "scr.lower", allow_none=True),
            scr_upper=_number(scr.get("upper"), "scr.upper", allow_none=True),
            premium_bounds=premium,
            cv_cap=_number(doc.get("cv_cap"), "cv_cap", allow_none=True),
            cv_caps=cv_caps,
            reinsurance=tuple(rules),
            scr_strict=strict,
        )
    except ValueError as exc:
        raise SchemaError("", str(exc)) from exc


# -- documents (inverse of the parsers) -----------------------------------------


def _num_out(v: float | None) -> float | None:
    if v is None or not math.isfinite(v):
        return None
    return float(v)


def tree_to_document(tree: RiskTree) -> dict:
    return {
        "name": tree.name,
        "correlation": tree.corr.tolist(),
        "macros": [
            {
                "id": m.id,
                "name": m.name,
                "correlation": m.corr.tolist(),
                "micros": [{"id": u.id, "name": u.name, "scr": float(u.scr)} for u in m.micros],
            }
            for m in tree.macros
        ],
    }


def income_to_document(income: Mapping[str, NodeIncome]) -> dict:
    nodes = []
    for path, inc in income.items():
        d: dict[str, Any] = {"path": path, "mean": float(inc.mean)}
        if inc.std is not None:
            d["std"] = float(inc.std)
        nodes.append(d)
    return {"nodes": nodes}


def scenarios_to_document(scenarios: Sequence[Scenario]) -> dict:
    return {
        "scenarios": [
            {
                "id": s.id,
                "premiums": {k: float(v) for k, v in s.premiums.items()},
                "reinsurance": {"tags": dict(s.reinsurance.tags), "params": {k: float(v) for k, v in s.reinsurance.params.items()}},
                "tree": tree_to_document(s.tree),
                "income": income_to_document(s.income),
            }
            for s in scenarios
        ]
    }


def constraints_to_document(c: ConstraintSet) -> dict:
    return {
        "scr": {"lower": _num_out(c.scr_lower), "upper": _num_out(c.scr_upper), "strict": c.scr_strict},
        "premium": {lob: {"lower": _num_out(lo), "upper": _num_out(hi)} for lob, (lo, hi) in c.premium_bounds.items()},
        "cv_cap": _num_out(c.cv_cap),
        "cv_caps": {k: float(v) for k, v in c.cv_caps.items()},
        "reinsurance": [
            {"name": r.name, "key": r.key, "op": r.op, "value": list(r.value) if isinstance(r.value, (list, tuple)) else r.value}
            for r in c.reinsurance
        ],
    }


# -- reports ------------------------------------------------------------------


class Table:
    """Header plus rows; serialised as CSV or as a list of JSON records."""

    def __init__(self, header: Sequence[str], rows: Iterable[Sequence[Any]], title: str = "") -> None:
        self.header = list(header)
        self.rows = [list(r) for r in rows]
        self.title = title

    def records(self) -> list[dict]:
        return [{h: _jsonable(v) for h, v in zip(self.header, r)} for r in self.rows]


def _jsonable(v: Any) -> Any:
    if isinstance(v, float):
        return v if math.isfinite(v) else None
    if hasattr(v, "item"):
        return _jsonable(v.item())
    return v


def format_number(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)) or hasattr(v, "item"):
        return "%.12g" % float(v)
    return str(v)


def table_to_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.header)
    for r in table.rows:
        w.writerow([format_number(v) for v in r])
    return buf.getvalue()


def csv_to_rows(text: str) -> tuple[list[str], list[list[str]]]:
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


def aggregation_table(agg: AggregationOutput) -> Table:
    rows = [[m, v] for m, v in agg.macro_scrs] + [["<total>", agg.total_scr]]
    return Table(["node", "scr"], rows, "aggregation")


def allocation_table(result: AllocationResult) -> Table:
    rows = [[m.id, "macro", m.standalone, m.allocated, m.ratio, m.delta] for m in result.macros]
    rows += [[u.path, "micro", u.standalone, u.allocated, None, u.delta] for u in result.micros]
    rows.append(["<total>", "total", sum(m.standalone for m in result.macros), result.total_scr, None, None])
    return Table(["node", "level", "standalone_scr", "allocated_scr", "allocation_ratio", "diversification"], rows, "allocation")


def diversification_table(report: DiversificationReport) -> Table:
    rows = [[r.path, r.level, r.standalone, r.allocated, r.delta] for r in report.rows]
    rows.append(["<total>", "total", report.total_standalone, report.total_scr, report.total_diversification])
    return Table(["node", "level", "standalone_scr", "allocated_scr", "delta"], rows, "diversification")


def rorac_table(report: RoracReport) -> Table:
    rows = [[n.path, n.income, n.income_std, n.capital, n.rorac, n.rorac_std, n.cv] for n in report.nodes]
    rows.append(["<total>", report.total_income, None, report.total_capital, report.rorac, report.rorac_std, None])
    return Table(["node", "expected_income", "income_std", "allocated_scr", "rorac", "rorac_std", "cv"], rows, "rorac")


def compatibility_table(verdict: CompatibilityVerdict) -> Table:
    rows = [[verdict.node, p.h, p.rorac, p.change, verdict.node_rorac, verdict.total_rorac] for p in verdict.points]
    return Table(["node", "h", "total_rorac_after", "change", "node_rorac", "total_rorac"], rows, "compatibility")


def comparison_table(report: ComparisonReport) -> Table:
    rows = [[r.path, r.closed_form, r.monte_carlo, r.se, r.z, r.flagged] for r in report.rows]
    return Table(["node", "closed_form", "monte_carlo", "std_error", "z", "flagged"], rows, "mc_comparison")


def optimization_table(report: OptimizationReport) -> Table:
    rows = []
    best = report.optimum.id if report.optimum else None
    for r in list(report.feasible) + list(report.infeasible):
        violated = ";".join(v.id for v in r.verdict.violations)
        rows.append([r.id, r.verdict.feasible, r.id == best, r.total_scr, r.expected_rorac, violated])
    return Table(["scenario", "feasible", "selected", "total_scr", "expected_rorac", "violations"], rows, "optimization")


def frontier_table(data: FrontierDataset) -> Table:
    rows = [[r.lob, r.name, r.rorac, r.rorac_std, r.capital] for r in data.rows]
    if data.total is not None:
        t = data.total
        rows.append([t.lob, t.name, t.rorac, t.rorac_std, t.capital])
    return Table(["lob", "name", "expected_rorac", "rorac_std", "allocated_scr"], rows, data.note or "frontier")


def _table_payload(table: Table) -> dict:
    return {"title": table.title, "columns": table.header, "rows": table.records()}


def write_reports(reports: Mapping[str, Table], target: str | Path, fmt: str = "json") -> list[Path]:
    """Write one file per report into directory ``target``."""
    out_dir = Path(target)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    written = []
    for name in sorted(reports):
        table = reports[name]
        if fmt == "csv":
            path = out_dir / f"{name}.csv"
            text = table_to_csv(table)
        elif fmt == "json":
            path = out_dir / f"{name}.json"
            text = json.dumps(_table_payload(table), indent=2, allow_nan=False) + "\n"
        else:
            raise ValueError(f"unknown format {fmt!r}")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    return written


def render_table(table: Table) -> str:
    """Plain-text rendering for stdout."""
    cells = [table.header] + [[format_number(v) for v in r] for r in table.rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(table.header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# -- SVG scatter --------------------------------------------------------------

_SVG_W, _SVG_H = 720, 480
_MARGIN = 70


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 12))
        v += step
    return ticks


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def render_svg_scatter(data: FrontierDataset, title: str = "Risk-return profile") -> str:
    points = list(data.rows) + ([data.total] if data.total is not None else [])
    xs = [p.capital for p in points] or [0.0, 1.0]
    ys = [p.rorac for p in points] or [0.0, 0.1]
    xt = _nice_ticks(min(0.0, min(xs)), max(xs) * 1.05 if max(xs) > 0 else 1.0)
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    pad = 0.05 * (y_hi - y_lo or 1.0)
    yt = _nice_ticks(y_lo - pad, y_hi + pad)
    x0, x1, y0, y1 = xt[0], xt[-1], yt[0], yt[-1]
    plot_w, plot_h = _SVG_W - 2 * _MARGIN, _SVG_H - 2 * _MARGIN

    def sx(v: float) -> float:
        return _MARGIN + (v - x0) / (x1 - x0) * plot_w

    def sy(v: float) -> float:
        return _SVG_H - _MARGIN - (v - y0) / (y1 - y0) * plot_h

    sigmas = [p.rorac_std for p in points if p.rorac_std is not None]
    s_max = max(sigmas) if sigmas and max(sigmas) > 0 else 1.0
    f = "%.2f"
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" viewBox="0 0 {_SVG_W} {_SVG_H}" font-family="sans-serif" font-size="11">',
        f'<text x="{_SVG_W // 2}" y="24" text-anchor="middle" font-size="14">{_escape(title)}</text>',
        f'<line x1="{_MARGIN}" y1="{_SVG_H - _MARGIN}" x2="{_SVG_W - _MARGIN}" y2="{_SVG_H - _MARGIN}" stroke="black"/>',
        f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" y2="{_SVG_H - _MARGIN}" stroke="black"/>',
    ]
    for t in xt:
        x = f % sx(t)
        out.append(f'<line x1="{x}" y1="{_SVG_H - _MARGIN}" x2="{x}" y2="{_SVG_H - _MARGIN + 5}" stroke="black"/>')
        out.append(f'<text x="{x}" y="{_SVG_H - _MARGIN + 18}" text-anchor="middle">{"%.12g" % t}</text>')
    for t in yt:
        y = f % sy(t)
        out.append(f'<line x1="{_MARGIN - 5}" y1="{y}" x2="{_MARGIN}" y2="{y}" stroke="black"/>')
        out.append(f'<text x="{_MARGIN - 8}" y="{y}" text-anchor="end" dominant-baseline="middle">{"%.12g" % (t * 100)}%</text>')
    if y0 < 0 < y1:
        y = f % sy(0.0)
        out.append(f'<line x1="{_MARGIN}" y1="{y}" x2="{_SVG_W - _MARGIN}" y2="{y}" stroke="grey" stroke-dasharray="4 3"/>')
    out.append(f'<text x="{_SVG_W // 2}" y="{_SVG_H - 20}" text-anchor="middle">allocated SCR</text>')
    out.append(f'<text x="18" y="{_SVG_H // 2}" text-anchor="middle" transform="rotate(-90 18 {_SVG_H // 2})">E(RORAC)</text>')
    if data.note and not data.rows:
        out.append(f'<text x="{_SVG_W // 2}" y="{_SVG_H // 2}" text-anchor="middle" fill="grey">{_escape(data.note)}</text>')
    for p in points:
        is_total = data.total is not None and p is data.total
        r = 4.0 + 16.0 * ((p.rorac_std or 0.0) / s_max)
        colour = "#c0392b" if is_total else "#2c7fb8"
        cls = "total" if is_total else "lob"
        out.append(
            f'<circle class="{cls}" cx="{f % sx(p.capital)}" cy="{f % sy(p.rorac)}" r="{f % r}" '
            f'fill="{colour}" fill-opacity="0.6" stroke="{colour}"><title>{_escape(p.name)}</title></circle>'
        )
        out.append(f'<text x="{f % (sx(p.capital) + r + 3)}" y="{f % sy(p.rorac)}" dominant-baseline="middle">{_escape(p.name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_scatter(data: FrontierDataset, target: str | Path, title: str = "Risk-return profile") -> Path:
    path = Path(target)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_svg_scatter(data, title))
    return path


def write_json(obj: Any, target: str | Path) -> Path:
    path = Path(target)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")
    return path
