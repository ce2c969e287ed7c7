"""Minimal log-log SVG emitter for scaling reports."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#17becf", "#7f7f7f", "#bcbd22")
W, H = 640, 440
ML, MR, MT, MB = 70, 170, 30, 50


def _decades(lo, hi):
    return list(range(math.floor(lo), math.ceil(hi) + 1))


def loglog_svg(series, title="") -> str:
    """``series``: list of dicts with ``name``, ``x``, ``y`` (positive) and
    optional ``fit`` = (slope, intercept) and ``target`` slope. Fitted lines
    are solid, target-slope references dashed through the first point."""
    pts = [(x, y) for s in series for x, y in zip(s["x"], s["y"]) if x > 0 and y > 0]
    if not pts:
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">'
                f'<text x="20" y="40">{escape(title)}: no positive data</text></svg>\n')
    lx = [math.log10(p[0]) for p in pts]
    ly = [math.log10(p[1]) for p in pts]
    x0, x1 = min(lx) - 0.05, max(lx) + 0.05
    y0, y1 = min(ly) - 0.2, max(ly) + 0.2
    if x1 - x0 < 1e-9:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return ML + (v - x0) / (x1 - x0) * (W - ML - MR)

    def py(v):
        return H - MB - (v - y0) / (y1 - y0) * (H - MT - MB)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2 - MR / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
           f'{escape(title)}</text>',
           f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
           f'fill="none" stroke="black"/>']
    for d in _decades(x0, x1):
        for k in range(1, 10):
            v = d + math.log10(k)
            if x0 <= v <= x1:
                major = k == 1
                out.append(f'<line x1="{px(v):.1f}" y1="{H - MB}" x2="{px(v):.1f}" '
                           f'y2="{H - MB + (6 if major else 3)}" stroke="black"/>')
                if major:
                    out.append(f'<text x="{px(v):.1f}" y="{H - MB + 18}" '
                               f'text-anchor="middle">1e{d}</text>')
    for d in _decades(y0, y1):
        for k in range(1, 10):
            v = d + math.log10(k)
            if y0 <= v <= y1:
                major = k == 1
                out.append(f'<line x1="{ML - (6 if major else 3)}" y1="{py(v):.1f}" '
                           f'x2="{ML}" y2="{py(v):.1f}" stroke="black"/>')
                if major:
                    out.append(f'<text x="{ML - 8}" y="{py(v) + 4:.1f}" '
                               f'text-anchor="end">1e{d}</text>')
    out.append(f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 12}" text-anchor="middle">width n</text>')
    for i, s in enumerate(series):
        c = _COLORS[i % len(_COLORS)]
        xy = [(math.log10(x), math.log10(y)) for x, y in zip(s["x"], s["y"]) if x > 0 and y > 0]
        if xy:
            poly = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in xy)
            out.append(f'<polyline points="{poly}" fill="none" stroke="{c}" '
                       f'stroke-opacity="0.5"/>')
            for a, b in xy:
                out.append(f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="3" fill="{c}"/>')
        fit = s.get("fit")
        if fit and fit[0] is not None and xy:
            slope, icpt = fit
            ends = [(v, (icpt + slope * v * math.log(10)) / math.log(10))
                    for v in (xy[0][0], xy[-1][0])]
            out.append(f'<line x1="{px(ends[0][0]):.1f}" y1="{py(ends[0][1]):.1f}" '
                       f'x2="{px(ends[1][0]):.1f}" y2="{py(ends[1][1]):.1f}" stroke="{c}" '
                       f'stroke-width="1.5"/>')
        target = s.get("target")
        if target is not None and xy:
            a0, b0 = xy[0]
            a1 = xy[-1][0]
            b1 = b0 + target * (a1 - a0)
            out.append(f'<line x1="{px(a0):.1f}" y1="{py(b0):.1f}" x2="{px(a1):.1f}" '
                       f'y2="{py(b1):.1f}" stroke="{c}" stroke-dasharray="5,4"/>')
        label = s["name"]
        if fit and fit[0] is not None:
            label += f" ({fit[0]:.2f}"
            label += f" vs {target:g})" if target is not None else ")"
        ly_ = MT + 14 + 16 * i
        out.append(f'<rect x="{W - MR + 10}" y="{ly_ - 8}" width="10" height="10" fill="{c}"/>')
        out.append(f'<text x="{W - MR + 26}" y="{ly_ + 1}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_svg(report, title="scaling report") -> str:
    series = []
    for metric, fit in report.fits.items():
        pts = [p for p in report.points if p["metric"] == metric]
        series.append({
            "name": metric, "x": [p["width"] for p in pts], "y": [p["estimate"] for p in pts],
            "fit": (fit.get("slope"), fit.get("intercept")), "target": fit.get("target"),
        })
    return loglog_svg(series, title)
