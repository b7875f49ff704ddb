"""Minimal deterministic SVG charts: line plots, range bars, heat strips."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
W, H = 640, 400
ML, MR, MT, MB = 70, 150, 40, 50


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{escape(title)}</text>',
        f'<text x="{ML + (W - ML - MR) / 2}" y="{H - 10}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif">{escape(xlabel)}</text>',
        f'<text x="16" y="{MT + (H - MT - MB) / 2}" text-anchor="middle" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 16 {MT + (H - MT - MB) / 2})">{escape(ylabel)}</text>',
        f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="black"/>',
    ]


class _Scale:
    def __init__(self, lo, hi, a, b, log=False):
        if log:
            lo, hi = math.log10(lo), math.log10(hi)
        if hi == lo:
            hi = lo + 1.0
        self.lo, self.hi, self.a, self.b, self.log = lo, hi, a, b, log

    def __call__(self, v):
        if self.log:
            v = math.log10(v)
        return self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)

    def ticks(self, n=5):
        vals = [self.lo + i * (self.hi - self.lo) / (n - 1) for i in range(n)]
        return [(10 ** v if self.log else v) for v in vals]


def _finite(vals):
    return [v for v in vals if v is not None and math.isfinite(v)]


def _axes(xs: _Scale, ys: _Scale, xticks=None) -> list[str]:
    out = []
    for v in ys.ticks():
        y = ys(v)
        out.append(f'<line x1="{ML - 4}" y1="{y:.2f}" x2="{ML}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ML - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="10" '
                   f'font-family="sans-serif">{_fmt(v)}</text>')
    for v in (xticks if xticks is not None else xs.ticks()):
        x = xs(v)
        out.append(f'<line x1="{x:.2f}" y1="{H - MB}" x2="{x:.2f}" y2="{H - MB + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{H - MB + 16}" text-anchor="middle" font-size="10" '
                   f'font-family="sans-serif">{_fmt(v)}</text>')
    return out


def _legend(names: list[str]) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = MT + 10 + 18 * i
        c = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{W - MR + 10}" y="{y - 8}" width="12" height="12" fill="{c}"/>')
        out.append(f'<text x="{W - MR + 28}" y="{y + 2}" font-size="11" font-family="sans-serif">{escape(name)}</text>')
    return out


def line_chart(series: dict[str, tuple[list[float], list[float]]], title: str, xlabel: str, ylabel: str,
               logx: bool = False, logy: bool = False) -> str:
    xs_all = _finite([x for xs, _ in series.values() for x in xs])
    ys_all = _finite([y for _, ys in series.values() for y in ys])
    if logy:
        ys_all = [y for y in ys_all if y > 0]
    if logx:
        xs_all = [x for x in xs_all if x > 0]
    xs_all = xs_all or [0.0, 1.0]
    ys_all = ys_all or [1.0, 10.0] if logy else ys_all or [0.0, 1.0]
    sx = _Scale(min(xs_all), max(xs_all), ML, W - MR, logx)
    sy = _Scale(min(ys_all), max(ys_all), H - MB, MT, logy)
    out = _frame(title, xlabel, ylabel) + _axes(sx, sy)
    for i, (name, (xs, ys)) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        pts = [(sx(x), sy(y)) for x, y in zip(xs, ys)
               if x is not None and y is not None and math.isfinite(x) and math.isfinite(y)
               and (not logy or y > 0) and (not logx or x > 0)]
        if len(pts) > 1:
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{c}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{c}"/>')
    out += _legend(list(series))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def range_bars(ranges: dict[str, tuple[float, float]], title: str, ylabel: str, logy: bool = True) -> str:
    vals = _finite([v for lo_hi in ranges.values() for v in lo_hi])
    if logy:
        vals = [v for v in vals if v > 0]
    vals = vals or [1.0, 10.0]
    sy = _Scale(min(vals), max(vals), H - MB, MT, logy)
    names = list(ranges)
    n = max(len(names), 1)
    slot = (W - ML - MR) / n
    out = _frame(title, "scheme", ylabel)
    for v in sy.ticks():
        y = sy(v)
        out.append(f'<text x="{ML - 6}" y="{y + 4:.2f}" text-anchor="end" font-size="10" '
                   f'font-family="sans-serif">{_fmt(v)}</text>')
    for i, name in enumerate(names):
        lo, hi = ranges[name]
        x = ML + slot * (i + 0.5)
        c = PALETTE[i % len(PALETTE)]
        if math.isfinite(lo) and math.isfinite(hi) and (not logy or lo > 0):
            y0, y1 = sy(lo), sy(hi)
            out.append(f'<rect x="{x - slot / 4:.2f}" y="{min(y0, y1):.2f}" width="{slot / 2:.2f}" '
                       f'height="{max(abs(y0 - y1), 1):.2f}" fill="{c}"/>')
        out.append(f'<text x="{x:.2f}" y="{H - MB + 16}" text-anchor="middle" font-size="11" '
                   f'font-family="sans-serif">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heat_strip(rows: dict[str, list[bool]], columns: list[float], title: str, xlabel: str) -> str:
    """Green cell = stable, red cell = diverged."""
    names = list(rows)
    cw = (W - ML - MR) / max(len(columns), 1)
    ch = min(40.0, (H - MT - MB) / max(len(names), 1))
    out = _frame(title, xlabel, "")
    for r, name in enumerate(names):
        y = MT + r * ch
        out.append(f'<text x="{ML - 6}" y="{y + ch / 2 + 4:.2f}" text-anchor="end" font-size="11" '
                   f'font-family="sans-serif">{escape(name)}</text>')
        for cidx, diverged in enumerate(rows[name]):
            fill = "#d62728" if diverged else "#2ca02c"
            out.append(f'<rect x="{ML + cidx * cw:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                       f'fill="{fill}" stroke="white"/>')
    for cidx, v in enumerate(columns):
        out.append(f'<text x="{ML + (cidx + 0.5) * cw:.2f}" y="{H - MB + 16}" text-anchor="middle" '
                   f'font-size="10" font-family="sans-serif">{_fmt(v)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
