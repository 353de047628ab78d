"""Minimal SVG figures for error profiles, importance profiles and histograms.

Plots are pure presentation: they read finished profiles and never touch the
numeric outputs. Distance axes can be square-root transformed; the transform
lives in plot coordinates only.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
           "#1f78b4", "#b2df8a"]

_W, _H = 420, 300
_ML, _MR, _MT, _MB = 58, 12, 28, 44


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _sqrt_ticks(hi):
    cands = [0, 25, 50, 100, 200, 300, 500, 750, 1000, 1500, 2000, 3000, 5000, 7500, 10000, 20000]
    ticks = [c for c in cands if c <= hi]
    return ticks if len(ticks) >= 2 else _nice_ticks(0, hi)


def _fmt(v):
    return f"{v:g}" if abs(v) < 1e5 else f"{v:.2e}"


class _Panel:
    """One set of axes at offset (ox, oy)."""

    def __init__(self, ox, oy, xmax, ylo, yhi, sqrt_x, title="", xlabel="", ylabel="",
                 w=_W, h=_H):
        self.ox, self.oy, self.w, self.h = ox, oy, w, h
        self.sqrt_x = sqrt_x
        self.xmax = xmax if xmax > 0 else 1.0
        pad = 0.05 * (yhi - ylo if yhi > ylo else 1.0)
        self.ylo, self.yhi = (ylo - pad, yhi + pad) if yhi > ylo else (ylo - 1.0, ylo + 1.0)
        self.parts = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def _tx(self, x):
        return math.sqrt(max(x, 0.0)) if self.sqrt_x else x

    def px(self, x):
        return self.ox + _ML + (self.w - _ML - _MR) * self._tx(x) / self._tx(self.xmax)

    def py(self, y):
        return self.oy + self.h - _MB - (self.h - _MT - _MB) * (y - self.ylo) / (self.yhi - self.ylo)

    def axes(self):
        x0, x1 = self.ox + _ML, self.ox + self.w - _MR
        y0, y1 = self.oy + self.h - _MB, self.oy + _MT
        p = [f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#333"/>']
        xt = _sqrt_ticks(self.xmax) if self.sqrt_x else _nice_ticks(0, self.xmax)
        for t in xt:
            if t > self.xmax:
                continue
            X = self.px(t)
            p.append(f'<line x1="{X:.1f}" y1="{y0}" x2="{X:.1f}" y2="{y0 + 4}" stroke="#333"/>')
            p.append(f'<text x="{X:.1f}" y="{y0 + 15}" font-size="10" text-anchor="middle">{_fmt(t)}</text>')
        for t in _nice_ticks(self.ylo, self.yhi):
            if not self.ylo <= t <= self.yhi:
                continue
            Y = self.py(t)
            p.append(f'<line x1="{x0 - 4}" y1="{Y:.1f}" x2="{x0}" y2="{Y:.1f}" stroke="#333"/>')
            p.append(f'<text x="{x0 - 6}" y="{Y + 3:.1f}" font-size="10" text-anchor="end">{_fmt(round(t, 10))}</text>')
        if self.ylo < 0 < self.yhi:
            Y = self.py(0)
            p.append(f'<line x1="{x0}" y1="{Y:.1f}" x2="{x1}" y2="{Y:.1f}" stroke="#aaa" stroke-dasharray="3,3"/>')
        cx = (x0 + x1) / 2
        if self.title:
            p.append(f'<text x="{cx}" y="{self.oy + 17}" font-size="12" text-anchor="middle" '
                     f'font-weight="bold">{escape(self.title)}</text>')
        if self.xlabel:
            p.append(f'<text x="{cx}" y="{self.oy + self.h - 8}" font-size="11" '
                     f'text-anchor="middle">{escape(self.xlabel)}</text>')
        if self.ylabel:
            yc = (y0 + y1) / 2
            p.append(f'<text x="{self.ox + 14}" y="{yc}" font-size="11" text-anchor="middle" '
                     f'transform="rotate(-90 {self.ox + 14} {yc})">{escape(self.ylabel)}</text>')
        self.parts[:0] = p

    def line(self, xs, ys, color, width=1.8, dash=None):
        pts = " ".join(f"{self.px(x):.1f},{self.py(y):.1f}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def points(self, xs, ys, color, r=2.0):
        for x, y in zip(xs, ys):
            self.parts.append(f'<circle cx="{self.px(x):.1f}" cy="{self.py(y):.1f}" r="{r}" fill="{color}"/>')

    def marker(self, x, y, color, label):
        X, Y = self.px(x), self.py(y)
        self.parts.append(f'<path d="M{X - 4:.1f},{Y:.1f} L{X:.1f},{Y - 4:.1f} L{X + 4:.1f},{Y:.1f} '
                          f'L{X:.1f},{Y + 4:.1f} Z" fill="{color}" stroke="#000" stroke-width="0.6"/>')
        self.parts.append(f'<text x="{X + 6:.1f}" y="{Y - 4:.1f}" font-size="9">{escape(label)}</text>')

    def bars(self, edges, counts, color):
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            if c == 0:
                continue
            x0, x1 = self.px(lo), self.px(hi)
            y = self.py(c)
            self.parts.append(f'<rect x="{x0:.1f}" y="{y:.1f}" width="{max(x1 - x0 - 0.5, 0.5):.1f}" '
                              f'height="{self.py(self.ylo) - y:.1f}" fill="{color}" opacity="0.8"/>')

    def legend(self, entries):
        x = self.ox + self.w - _MR - 6
        for k, (label, color) in enumerate(entries):
            y = self.oy + _MT + 12 + 13 * k
            self.parts.append(f'<line x1="{x - 70}" y1="{y - 3}" x2="{x - 56}" y2="{y - 3}" '
                              f'stroke="{color}" stroke-width="2.5"/>')
            self.parts.append(f'<text x="{x - 52}" y="{y}" font-size="10">{escape(label)}</text>')

    def svg(self):
        self.axes()
        return "\n".join(self.parts)


def _document(width, height, body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def _curve(p):
    return p.smoothed if p.smoothed is not None else p.value


def spep_figure(profiles: dict, cv_points=(), sqrt_x: bool = True, title: str = "Spatial prediction error profile",
                ylabel: str | None = None, xmax: float | None = None) -> str:
    """Multi-model error profile with CV estimates at their mean distance.

    ``profiles`` maps a model label to a profile; ``cv_points`` holds
    ``(model, estimator, mean_distance, error)`` tuples drawn in the model's
    colour.
    """
    curves = [np.asarray(_curve(p)) for p in profiles.values()]
    ys = np.concatenate(curves + [np.array([e for *_, e in cv_points], dtype=float), np.zeros(1)])
    xs = [float(p.breakpoints[-1]) for p in profiles.values()] + [float(d) for _, _, d, _ in cv_points]
    xmax = xmax or (max(xs) if xs else 1.0)
    measure = next(iter(profiles.values())).measure if profiles else "error"
    panel = _Panel(0, 0, xmax, min(0.0, float(ys.min())), float(ys.max()), sqrt_x, title,
                   "prediction distance" + (" (square-root axis)" if sqrt_x else ""), ylabel or measure,
                   w=560, h=380)
    entries, colors = [], {}
    for k, (label, p) in enumerate(profiles.items()):
        color = colors[label] = PALETTE[k % len(PALETTE)]
        panel.line(p.d_hat, _curve(p), color)
        panel.points(p.d_hat, p.value, color, r=1.6)
        entries.append((label, color))
    for model, est, d, e in cv_points:
        panel.marker(d, e, colors.get(model, "#ffffff"), est)
    panel.legend(entries)
    return _document(560, 380, panel.svg())


def svip_figure(panels: dict, sqrt_x: bool = True, ncol: int = 2, se: dict | None = None) -> str:
    """Faceted importance profiles.

    ``panels`` maps a feature or group name to ``{model label: Profile}``.
    """
    names = list(panels)
    models = []
    for per_model in panels.values():
        for m in per_model:
            if m not in models:
                models.append(m)
    colors = {m: PALETTE[k % len(PALETTE)] for k, m in enumerate(models)}
    allv = [np.asarray(_curve(p)) for pm in panels.values() for p in pm.values()]
    ylo = min([0.0] + [float(v.min()) for v in allv])
    yhi = max([0.0] + [float(v.max()) for v in allv])
    xmax = max([float(p.breakpoints[-1]) for pm in panels.values() for p in pm.values()] or [1.0])
    ncol = max(1, min(ncol, len(names)))
    nrow = math.ceil(len(names) / ncol) if names else 1
    body = []
    for k, name in enumerate(names):
        panel = _Panel((k % ncol) * _W, (k // ncol) * _H, xmax, ylo, yhi, sqrt_x, name,
                       "prediction distance", "importance")
        for m, p in panels[name].items():
            panel.line(p.d_hat, _curve(p), colors[m])
        if k == 0:
            panel.legend([(m, colors[m]) for m in models])
        body.append(panel.svg())
    return _document(ncol * _W, nrow * _H, "\n".join(body))


def histogram_figure(summaries: dict, ncol: int = 2, xmax: float | None = None) -> str:
    """One histogram panel per scenario, ``summaries`` maps a title to a DistanceSummary."""
    names = list(summaries)
    ncol = max(1, min(ncol, len(names)))
    nrow = math.ceil(len(names) / ncol) if names else 1
    xmax = xmax or max([s.edges[-1] if s.edges else s.max for s in summaries.values()] or [1.0])
    body = []
    for k, name in enumerate(names):
        s = summaries[name]
        panel = _Panel((k % ncol) * _W, (k // ncol) * _H, xmax, 0.0, float(max(s.counts or [1])), False,
                       f"{name} (mean {s.mean:.0f})", "prediction distance", "count")
        panel.ylo = 0.0
        panel.bars(s.edges, s.counts, "#4c72b0")
        X = panel.px(s.mean)
        panel.parts.append(f'<line x1="{X:.1f}" y1="{panel.py(panel.yhi):.1f}" x2="{X:.1f}" '
                           f'y2="{panel.py(0):.1f}" stroke="#c00" stroke-dasharray="4,2"/>')
        body.append(panel.svg())
    return _document(ncol * _W, nrow * _H, "\n".join(body))


def write_svg(path, svg: str):
    Path(path).write_text(svg, encoding="utf-8")
