"""Self-contained static HTML report (clinician view, inline SVG charts).

Output is byte-deterministic for fixed input and well-formed XML, so the
rendering can be checked with a strict parser. No external assets, no
scripts; polylines are the only chart primitive.
"""

from __future__ import annotations

import html

from rehabpipe.model import rfc3339_utc

SVG_W = 640
SVG_H = 160
PAD = 8

_STYLE = (
    "body{font-family:sans-serif;margin:2em;color:#222}"
    "h1{font-size:1.4em}h2{font-size:1.05em;margin-bottom:0.2em}"
    "table{border-collapse:collapse;margin:0.5em 0}"
    "td,th{border:1px solid #bbb;padding:2px 8px;font-size:0.85em}"
    "svg{background:#fafafa;border:1px solid #ddd}"
    ".latest{color:#555;font-size:0.9em}"
    ".empty{color:#888;font-style:italic}"
)

_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b")


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _polyline(points: list[dict], t0: int, t1: int, v0: float, v1: float,
              color: str) -> str:
    span_t = max(t1 - t0, 1)
    span_v = (v1 - v0) or 1.0
    coords = []
    for p in points:
        x = PAD + (p["t"] - t0) / span_t * (SVG_W - 2 * PAD)
        y = SVG_H - PAD - (p["v"] - v0) / span_v * (SVG_H - 2 * PAD)
        coords.append(f"{x:.2f},{y:.2f}")
    return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{" ".join(coords)}" />')


def _chart(series: dict[str, list[dict]]) -> str:
    named = [(name, pts) for name, pts in sorted(series.items()) if pts]
    if not named:
        return '<p class="empty">no data</p>'
    all_points = [p for _, pts in named for p in pts]
    t0 = min(p["t"] for p in all_points)
    t1 = max(p["t"] for p in all_points)
    v0 = min(p["v"] for p in all_points)
    v1 = max(p["v"] for p in all_points)
    lines = "".join(
        _polyline(pts, t0, t1, v0, v1, _SERIES_COLORS[i % len(_SERIES_COLORS)])
        for i, (_, pts) in enumerate(named))
    legend = ", ".join(
        f"{html.escape(name)} ({len(pts)} pts)" for name, pts in named)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" '
            f'height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">{lines}</svg>'
            f'<p class="latest">range {_fmt(v0)} to {_fmt(v1)}; {legend}</p>')


def _table(rows: list[dict]) -> str:
    if not rows:
        return '<p class="empty">no data</p>'
    columns = list(rows[0].keys())
    head = "".join(f"<th>{html.escape(str(c))}</th>" for c in columns)
    body = "".join(
        "<tr>" + "".join(
            f"<td>{html.escape(str(row.get(c, '')))}</td>" for c in columns)
        + "</tr>"
        for row in rows)
    return f"<table><thead><tr>{head}</tr></thead><tbody>{body}</tbody></table>"


def render_static_report(dashboard: dict) -> str:
    """Render a clinician DashboardView as one self-contained HTML document."""
    pseudonym = dashboard["subject_pseudonym"]
    parts = [
        "<!DOCTYPE html>",
        '<html xmlns="http://www.w3.org/1999/xhtml"><head>',
        '<meta charset="utf-8" />',
        f"<title>Rehabilitation report {html.escape(pseudonym)}</title>",
        f"<style>{_STYLE}</style>",
        "</head><body>",
        f"<h1>Subject {html.escape(pseudonym)}</h1>",
    ]
    for panel in dashboard["panels"]:
        parts.append("<section>")
        parts.append(f"<h2>{html.escape(panel['title'])}</h2>")
        latest = panel.get("latest")
        if latest:
            parts.append(
                f'<p class="latest">latest {html.escape(latest["code"])}: '
                f'{_fmt(latest["value"])} {html.escape(latest["unit"])} at '
                f'{rfc3339_utc(latest["t"])}</p>')
        if "series" in panel:
            parts.append(_chart(panel["series"]))
        if "rows" in panel:
            parts.append(_table(panel["rows"]))
        parts.append("</section>")
    if not dashboard["panels"]:
        parts.append('<p class="empty">no panels configured</p>')
    parts.append("</body></html>")
    return "".join(parts)
