"""Benefit tables, congestion counters and report files (CSV or SVG)."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .grid import LOADING_HEADER, LoadingTrace
from .market import DELTA_T, ISP_PER_DAY

REPORT_FILES = ("benefit_summary", "congestion_stats", "loading_trace", "deviation_scatter")
BENEFIT_HEADER = ("case", "benefit_eur", "delta_pct")
CONGESTION_HEADER = ("case", "region", "isps", "days", "weeks", "hours")
SCATTER_HEADER = ("case", "isp", "brp_id", "mechanism", "state", "dev_kwh", "price_eur_mwh")


@dataclass(frozen=True)
class CongestionStats:
    isps: int
    days: int
    weeks: int
    hours: float


def congestion_frequency(traces, limit: float = 1.0) -> CongestionStats:
    """Count overloaded ISPs and the distinct days and weeks that contain one.

    ``traces`` is one or more :class:`LoadingTrace` (or ``(isps, loading)`` pairs);
    an ISP overloaded in several traces counts once. Weeks are ``day // 7`` from the
    start of the simulation.
    """
    if isinstance(traces, LoadingTrace) or (isinstance(traces, tuple) and len(traces) == 2
                                            and not isinstance(traces[0], LoadingTrace)):
        traces = [traces]
    hit = set()
    for tr in traces:
        isps, load = (tr.isps, tr.loading) if isinstance(tr, LoadingTrace) else tr
        isps = np.asarray(isps, dtype=np.int64)
        hit.update(isps[np.asarray(load) > limit].tolist())
    days = {i // ISP_PER_DAY for i in hit}
    weeks = {d // 7 for d in days}
    return CongestionStats(len(hit), len(days), len(weeks), len(hit) * DELTA_T)


def round_half_away(x: float, digits: int = 1) -> float:
    q = Decimal(1).scaleb(-digits)
    d = Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP)
    return float(d) + 0.0      # folds -0.0 into 0.0


def pct_delta(value: float, baseline: float, digits: int = 1) -> float:
    if baseline == 0:
        raise ZeroDivisionError("baseline benefit is zero")
    return round_half_away((value - baseline) / abs(baseline) * 100.0, digits)


@dataclass
class CaseSummary:
    """What the reports need from one case run."""

    label: str
    benefit: float
    ledger: list = field(default_factory=list)     # (isp, brp, mechanism, state, dev, price, cash)
    loading: list = field(default_factory=list)    # LoadingTrace per region

    @classmethod
    def from_result(cls, result) -> "CaseSummary":
        return cls(result.spec.label, result.benefit(), list(result.ledger),
                   [result.loading[r] for r in sorted(result.loading)])


def benefit_summary(cases, baseline: str | None = None) -> list:
    """Rows ``(case, benefit, delta_pct)``; ``cases`` maps labels to benefits or summaries.

    The baseline defaults to the single-price case ``sp`` when present, else the first.
    """
    if not isinstance(cases, dict):
        cases = {c.label: c for c in cases}
    values = {k: (v.benefit if isinstance(v, CaseSummary) else float(v)) for k, v in cases.items()}
    if not values:
        return []
    if baseline is None:
        baseline = "sp" if "sp" in values else next(iter(values))
    base = values[baseline]
    return [(k, v, pct_delta(v, base)) for k, v in values.items()]


# -- report files ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def report_tables(cases) -> dict:
    """Header and rows of every report file, the single source for CSV and SVG output."""
    cases = list(cases)
    tables = {"benefit_summary": (BENEFIT_HEADER, benefit_summary(cases) if cases else [])}
    cong, load, scatter = [], [], []
    for c in cases:
        for tr in c.loading:
            st = congestion_frequency(tr)
            cong.append((c.label, tr.region_id, st.isps, st.days, st.weeks, st.hours))
            for i in range(tr.isps.size):
                load.append((c.label, int(tr.isps[i]), tr.region_id, float(tr.flow[i]),
                             float(tr.loading[i]), float(tr.scheduled_loading[i]),
                             bool(tr.overload[i]), bool(tr.flagged[i])))
        for isp, brp, mech, state, dev, price, _cash in c.ledger:
            if dev != 0.0:
                scatter.append((c.label, int(isp), brp, mech, int(state), float(dev), float(price)))
    tables["congestion_stats"] = (CONGESTION_HEADER, cong)
    tables["loading_trace"] = (("case",) + LOADING_HEADER, load)
    tables["deviation_scatter"] = (SCATTER_HEADER, scatter)
    return tables


def _svg(name: str, header, rows, payload: str) -> str:
    w, h, pad = 640, 360, 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}">',
             f"<title>{escape(name)}</title>",
             f'<metadata id="payload">{escape(payload)}</metadata>',
             f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>']
    xs, ys = _plot_columns(name, header, rows)
    if xs.size:
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(min(ys.min(), 0.0)), float(max(ys.max(), 0.0))
        sx = (w - 2 * pad) / (x1 - x0 if x1 > x0 else 1.0)
        sy = (h - 2 * pad) / (y1 - y0 if y1 > y0 else 1.0)
        px = pad + (xs - x0) * sx
        py = h - pad - (ys - y0) * sy
        if name == "deviation_scatter":
            for a, b in zip(px, py):
                parts.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2" fill="steelblue"/>')
        elif name == "benefit_summary":
            slot = (w - 2 * pad) / xs.size
            zero = h - pad - (0.0 - y0) * sy
            for i, b in enumerate(py):
                top, hgt = min(b, zero), abs(zero - b)
                parts.append(f'<rect x="{pad + (i + 0.2) * slot:.2f}" y="{top:.2f}" '
                             f'width="{0.6 * slot:.2f}" height="{hgt:.2f}" fill="steelblue"/>')
        else:
            pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _plot_columns(name, header, rows):
    if not rows:
        return np.zeros(0), np.zeros(0)
    if name == "benefit_summary":
        return np.arange(len(rows), dtype=float), np.array([r[1] for r in rows], dtype=float)
    if name == "congestion_stats":
        return np.arange(len(rows), dtype=float), np.array([r[2] for r in rows], dtype=float)
    if name == "loading_trace":
        first = (rows[0][0], rows[0][2])
        sel = [r for r in rows if (r[0], r[2]) == first]
        return np.array([r[1] for r in sel], dtype=float), np.array([r[4] for r in sel], dtype=float)
    return np.array([r[6] for r in rows], dtype=float), np.array([r[5] for r in rows], dtype=float)


def extract_payload(svg_text: str) -> str:
    """CSV payload embedded in an SVG written by :func:`emit_report`."""
    from xml.etree import ElementTree as ET
    root = ET.fromstring(svg_text)
    for el in root.iter():
        if el.tag.endswith("metadata"):
            return el.text or ""
    raise ValueError("no payload metadata in svg")


def emit_report(cases, out_dir, fmt: str = "csv") -> list:
    """Write the four report files; returns their paths."""
    if fmt not in ("csv", "svg"):
        raise ValueError("format must be csv or svg")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (header, rows) in report_tables(cases).items():
        text = _csv_text(header, rows)
        path = out / f"{name}.{fmt}"
        path.write_text(text if fmt == "csv" else _svg(name, header, rows, text))
        paths.append(path)
    return paths


# -- run directories ------------------------------------------------------------

def write_case_dir(result, out_dir, config: dict | None = None) -> Path:
    """Persist one case run: ledger, loading traces, traces and a JSON summary."""
    from .grid import write_loading_traces
    from .settlement import write_ledger
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_ledger(result.ledger, out / "ledger.csv")
    write_loading_traces([result.loading[r] for r in sorted(result.loading)], out / "loading_trace.csv")
    rows = []
    for g in result.groups:
        tr = result.traces[g]
        for i in range(tr.e_rt.size):
            rows.append((i, g, float(tr.e_da[i]), float(tr.e_rt[i]), float(tr.surplus[i]),
                         float(tr.shortage[i]), tr.mechanism[i]))
    (out / "rt_trace.csv").write_text(_csv_text(
        ("isp", "brp_id", "e_da_kwh", "e_rt_kwh", "surplus_kwh", "shortage_kwh", "mechanism"), rows))
    summary = {
        "label": result.spec.label, "case": result.spec.name, "scope": result.spec.scope,
        "base": result.spec.base, "alt": result.spec.alt, "days": result.days,
        "benefit_eur": result.benefit(),
        "da_margin_eur": result.da_margin, "cashflow_eur": result.cashflow,
        "regions": {g: result.region_of[g] for g in result.groups},
        "config": config or {},
    }
    (out / "case.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def _read_loading(path: Path) -> list:
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_region: dict = {}
    for r in rows:
        by_region.setdefault(r["region"], []).append(r)
    out = []
    for rid in sorted(by_region):
        rs = by_region[rid]
        out.append(LoadingTrace(rid, np.array([int(r["isp"]) for r in rs]),
                                np.array([float(r["flow_mw"]) for r in rs]),
                                np.array([float(r["loading"]) for r in rs]),
                                np.array([float(r["scheduled_loading"]) for r in rs]),
                                np.array([r["flagged"] == "true" for r in rs])))
    return out


def _read_ledger(path: Path) -> list:
    with path.open(newline="") as fh:
        return [(int(r["isp"]), r["brp_id"], r["mechanism"], int(r["state"]), float(r["dev_kwh"]),
                 float(r["price_eur_mwh"]), float(r["cash_eur"])) for r in csv.DictReader(fh)]


def load_case_dir(path) -> CaseSummary:
    path = Path(path)
    meta = json.loads((path / "case.json").read_text())
    return CaseSummary(meta["label"], float(meta["benefit_eur"]), _read_ledger(path / "ledger.csv"),
                       _read_loading(path / "loading_trace.csv"))


def load_cases(path) -> list:
    """A run directory, or a directory of run directories (sorted by name)."""
    path = Path(path)
    if (path / "case.json").exists():
        return [load_case_dir(path)]
    dirs = sorted(p for p in path.iterdir() if (p / "case.json").exists())
    if not dirs:
        raise FileNotFoundError(f"{path}: no case.json found")
    return [load_case_dir(p) for p in dirs]
