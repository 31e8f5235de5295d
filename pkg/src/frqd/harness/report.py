"""Artifact writers: report JSON, trace CSV, SVG line plots and the policy table."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .experiment import REPORT_FORMAT, TRACE_COLUMNS, RunResult

ALGORITHM_LABELS = {
    "frqd": "FRQD",
    "qd": "QD",
    "trim_baseline": "Baseline (approximation)",
    "laplacian_reference": "Laplacian reference",
}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True, allow_nan=False) + "\n"


def trace_csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()


def write_artifacts(result: RunResult, out_dir=None) -> dict:
    """Write the configured artifacts and return ``{kind: path}``.

    Wall-clock time goes to its own ``timing.json`` so the report itself
    stays byte-identical between repeated runs.
    """
    outputs = result.config.outputs
    out = Path(out_dir if out_dir is not None else outputs.dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    if outputs.report:
        written["report"] = out / "report.json"
        written["report"].write_text(report_json(result.report))
    if outputs.trace:
        written["trace"] = out / "trace.csv"
        written["trace"].write_text(trace_csv(result.trace_rows))
    if outputs.plot:
        written["plot"] = out / "error_curve.svg"
        written["plot"].write_text(error_curve_svg(result.report))
        if result.report["tracked_pairs"]["series"]:
            written["pairs_plot"] = out / "tracked_pairs.svg"
            written["pairs_plot"].write_text(tracked_pairs_svg(result.report))
    written["timing"] = out / "timing.json"
    written["timing"].write_text(json.dumps({"wall_clock_seconds": result.wall_clock,
                                             "steps": result.report["steps"]}) + "\n")
    return written


def load_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != REPORT_FORMAT:
        raise ValueError(f"{path}: not a run report (format {doc.get('format')!r})")
    return doc


# --- SVG ------------------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        return [10.0 ** e for e in range(math.floor(lo), math.ceil(hi) + 1)]
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    return [first + k * step for k in range(int((hi - first) / step) + 1)]


def line_plot_svg(series: list[tuple[str, list, list]], title: str, xlabel: str, ylabel: str,
                  logx: bool = False, logy: bool = False, width: int = 720,
                  height: int = 440, hlines: Optional[list[tuple[str, float]]] = None) -> str:
    """Render ``(label, xs, ys)`` series as a standalone SVG document."""
    left, right, top, bottom = 70, 190, 40, 50
    pw, ph = width - left - right, height - top - bottom

    def tx(v):
        return math.log10(v) if logx else v

    def ty(v):
        return math.log10(v) if logy else v

    pts = [(tx(x), ty(y)) for _, xs, ys in series for x, y in zip(xs, ys)
           if (not logx or x > 0) and (not logy or y > 0)]
    pts += [(pts[0][0] if pts else 0.0, ty(v)) for _, v in (hlines or []) if not logy or v > 0]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2}" y="22" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for v in _ticks(x0, x1, logx):
        t = tx(v) if logx else v
        if x0 - 1e-9 <= t <= x1 + 1e-9:
            out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" '
                       f'y2="{top + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{px(t):.1f}" y="{top + ph + 16}" text-anchor="middle">'
                       f'{_tick_label(v, logx)}</text>')
    for v in _ticks(y0, y1, logy):
        t = ty(v) if logy else v
        if y0 - 1e-9 <= t <= y1 + 1e-9:
            out.append(f'<line x1="{left - 4}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" '
                       f'stroke="black"/>')
            out.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" text-anchor="end">'
                       f'{_tick_label(v, logy)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{_esc(ylabel)}</text>')
    legend = []
    for label, v in hlines or []:
        if logy and v <= 0:
            continue
        y = py(ty(v))
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + pw}" y2="{y:.1f}" '
                   f'stroke="black" stroke-dasharray="5,4"/>')
        legend.append((label, "black", "5,4"))
    for k, (label, xs, ys) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        coords = [f"{px(tx(x)):.1f},{py(ty(y)):.1f}" for x, y in zip(xs, ys)
                  if (not logx or x > 0) and (not logy or y > 0)]
        if coords:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{" ".join(coords)}"/>')
        legend.append((label, color, ""))
    for k, (label, color, dash) in enumerate(legend):
        y = top + 10 + 16 * k
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{left + pw + 12}" y1="{y}" x2="{left + pw + 36}" y2="{y}" '
                   f'stroke="{color}" stroke-width="2"{dash_attr}/>')
        out.append(f'<text x="{left + pw + 42}" y="{y + 4}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _tick_label(v: float, log: bool) -> str:
    if log:
        return f"1e{round(math.log10(v))}"
    return _fmt(v)


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def error_curve_svg(report: dict) -> str:
    curve = report["error_curve"]
    ts = [p["t"] for p in curve]
    n = len(curve[0]["per_agent"]) if curve else 0
    series = [("max over agents", ts, [p["max_error"] for p in curve])]
    series += [(f"agent {i}", ts, [p["per_agent"][i] for p in curve]) for i in range(n)]
    label = ALGORITHM_LABELS.get(report["algorithm"], report["algorithm"])
    return line_plot_svg(series, f"{label}: distance to the optimal Q-table", "step",
                         "sup-norm error", logx=True, logy=True)


def tracked_pairs_svg(report: dict) -> str:
    tracked = report["tracked_pairs"]
    series, hlines = [], []
    for key, rows in sorted(tracked["series"].items()):
        if not rows:
            continue
        ts = [r[0] for r in rows]
        for i in range(len(rows[0]) - 1):
            series.append((f"{key} agent {i}", ts, [r[i + 1] for r in rows]))
        hlines.append((f"{key} optimal", tracked["optimal"][key]))
    label = ALGORITHM_LABELS.get(report["algorithm"], report["algorithm"])
    return line_plot_svg(series, f"{label}: tracked Q entries", "step", "Q value", logx=True,
                         hlines=hlines, width=900, height=480)


# --- policy comparison -------------------------------------------------------------------


class IncomparableReports(ValueError):
    pass


def _pair_text(action) -> str:
    return f"({action[0]},{action[1]})" if isinstance(action, list) else str(action)


def _consensus_action(per_agent: list[list]) -> tuple[str, int]:
    """Most common first-choice action across agents and how many agents pick it."""
    firsts = [_pair_text(acts[0]) if acts else "-" for acts in per_agent]
    best = max(sorted(set(firsts)), key=firsts.count)
    return best, firsts.count(best)


def compare_reports(reports: list[dict]) -> list[dict]:
    """Per-state policy rows: the oracle first, then one row per report."""
    if not reports:
        raise ValueError("nothing to compare")
    prints = {r["mdp"]["fingerprint"] for r in reports}
    if len(prints) > 1:
        raise IncomparableReports(
            "reports come from different MDP instances (fingerprints "
            + ", ".join(sorted(prints)) + "); rerun with matching cost seeds")
    oracle = reports[0]["oracle"]["pi_star"]
    states = [s for s in oracle if reports[0]["policy_agreement"]["0"].get(s) is not None]
    rows = [{"algorithm": "Oracle", "cells": {s: (" / ".join(_pair_text(a) for a in oracle[s]),
                                                  None, None) for s in states}}]
    for rep in reports:
        n = rep["mdp"]["n_agents"]
        cells = {}
        for s in states:
            action, _ = _consensus_action([rep["policies"][str(i)][s] for i in range(n)])
            agree = sum(rep["policy_agreement"][str(i)][s] for i in range(n))
            cells[s] = (action, agree, n)
        rows.append({"algorithm": ALGORITHM_LABELS.get(rep["algorithm"], rep["algorithm"]),
                     "cells": cells})
    return rows


def format_table(rows: list[dict]) -> str:
    """Text grid; ``*`` marks states where every agent agrees with the oracle."""
    states = list(rows[0]["cells"])
    header = ["algorithm"] + [f"x={s}" for s in states]
    body = []
    for row in rows:
        line = [row["algorithm"]]
        for s in states:
            action, agree, n = row["cells"][s]
            if agree is None:
                line.append(action)
            else:
                line.append(f"{action}{'*' if agree == n else ''} [{agree}/{n}]")
        body.append(line)
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    fmt = lambda r: "  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in body]
    lines.append("* all agents' greedy sets contain an optimal action; [k/n] agents agreeing")
    return "\n".join(lines) + "\n"


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["algorithm", "state", "action", "agents_agreeing", "n_agents",
                     "matches_oracle"])
    for row in rows:
        for s, (action, agree, n) in row["cells"].items():
            if agree is None:
                writer.writerow([row["algorithm"], s, action, "", "", ""])
            else:
                writer.writerow([row["algorithm"], s, action, agree, n, int(agree == n)])
    return buf.getvalue()
