"""Self-contained SVG charts. No plotting library needed; output is plain text."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
W, H = 640, 400
PAD_L, PAD_R, PAD_T, PAD_B = 64, 24, 40, 56


def _fmt(v: float) -> str:
    return f"{v:.4g}"


class _Frame:
    """Maps data coordinates onto the plot area."""

    def __init__(self, x_lo, x_hi, y_lo, y_hi):
        if x_hi <= x_lo:
            x_hi = x_lo + 1.0
        if y_hi <= y_lo:
            y_hi = y_lo + 1.0
        self.x_lo, self.x_hi, self.y_lo, self.y_hi = x_lo, x_hi, y_lo, y_hi

    def px(self, x):
        return PAD_L + (x - self.x_lo) / (self.x_hi - self.x_lo) * (W - PAD_L - PAD_R)

    def py(self, y):
        return H - PAD_B - (y - self.y_lo) / (self.y_hi - self.y_lo) * (H - PAD_T - PAD_B)


def _axes(f: _Frame, title: str, xlabel: str, ylabel: str, xticks=None) -> list[str]:
    out = [
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{PAD_L}" y1="{H - PAD_B}" x2="{W - PAD_R}" y2="{H - PAD_B}" stroke="black"/>',
        f'<line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{H - PAD_B}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 14}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="16" y="{H / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {H / 2})">{escape(ylabel)}</text>',
    ]
    for y in np.linspace(f.y_lo, f.y_hi, 5):
        yy = f.py(y)
        out.append(f'<line x1="{PAD_L - 4}" y1="{yy:.1f}" x2="{PAD_L}" y2="{yy:.1f}" stroke="black"/>')
        out.append(f'<text x="{PAD_L - 6}" y="{yy + 4:.1f}" text-anchor="end" font-size="10">{_fmt(y)}</text>')
    if xticks is None:
        xticks = [(x, _fmt(x)) for x in np.linspace(f.x_lo, f.x_hi, 6)]
    for x, label in xticks:
        xx = f.px(x)
        out.append(f'<line x1="{xx:.1f}" y1="{H - PAD_B}" x2="{xx:.1f}" y2="{H - PAD_B + 4}" stroke="black"/>')
        out.append(f'<text x="{xx:.1f}" y="{H - PAD_B + 16}" text-anchor="middle" font-size="10">'
                   f'{escape(label)}</text>')
    return out


def _legend(names) -> list[str]:
    out = []
    for i, name in enumerate(names):
        y = PAD_T + 6 + 16 * i
        c = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{W - PAD_R - 150}" y="{y}" width="10" height="10" fill="{c}"/>')
        out.append(f'<text x="{W - PAD_R - 134}" y="{y + 9}" font-size="11">{escape(name)}</text>')
    return out


def _doc(parts) -> str:
    body = "\n".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif">\n{body}\n</svg>\n')


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, xticks=None) -> str:
    """``series`` maps a name to (xs, ys)."""
    xs = np.concatenate([np.asarray(v[0], float) for v in series.values()])
    ys = np.concatenate([np.asarray(v[1], float) for v in series.values()])
    ys = ys[np.isfinite(ys)]
    f = _Frame(float(xs.min()), float(xs.max()), min(0.0, float(ys.min(initial=0))), float(ys.max(initial=1)))
    out = _axes(f, title, xlabel, ylabel, xticks)
    for i, (name, (sx, sy)) in enumerate(series.items()):
        pts = " ".join(f"{f.px(x):.1f},{f.py(y):.1f}" for x, y in zip(sx, sy) if np.isfinite(y))
        c = PALETTE[i % len(PALETTE)]
        out.append(f'<polyline points="{pts}" fill="none" stroke="{c}" stroke-width="2"/>')
        for x, y in zip(sx, sy):
            if np.isfinite(y):
                out.append(f'<circle cx="{f.px(x):.1f}" cy="{f.py(y):.1f}" r="3" fill="{c}"/>')
    if len(series) > 1:
        out += _legend(series)
    return _doc(out)


def histogram_chart(edges, series: dict, title: str, xlabel: str, ylabel: str = "count") -> str:
    """Overlaid step histograms sharing ``edges``; ``series`` maps a name to counts."""
    edges = np.asarray(edges, float)
    top = max(float(np.max(c)) if len(c) else 0.0 for c in series.values())
    f = _Frame(float(edges[0]), float(edges[-1]), 0.0, top if top > 0 else 1.0)
    out = _axes(f, title, xlabel, ylabel)
    for i, (name, counts) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        pts = [f"{f.px(edges[0]):.1f},{f.py(0):.1f}"]
        for lo, hi, n in zip(edges[:-1], edges[1:], counts):
            pts.append(f"{f.px(lo):.1f},{f.py(n):.1f}")
            pts.append(f"{f.px(hi):.1f},{f.py(n):.1f}")
        pts.append(f"{f.px(edges[-1]):.1f},{f.py(0):.1f}")
        out.append(f'<polyline points="{" ".join(pts)}" fill="{c}" fill-opacity="0.25" '
                   f'stroke="{c}" stroke-width="1.5"/>')
    if len(series) > 1:
        out += _legend(series)
    return _doc(out)


def bar_chart(groups: list[str], series: dict, title: str, ylabel: str) -> str:
    """Grouped bars; ``series`` maps a name to one value per group (None is skipped)."""
    vals = [v for vs in series.values() for v in vs if v is not None]
    f = _Frame(0.0, float(len(groups)), 0.0, max(vals, default=1.0) or 1.0)
    ticks = [(i + 0.5, g) for i, g in enumerate(groups)]
    out = _axes(f, title, "", ylabel, ticks)
    n = max(len(series), 1)
    width = 0.8 / n
    for k, (name, vs) in enumerate(series.items()):
        c = PALETTE[k % len(PALETTE)]
        for i, v in enumerate(vs):
            if v is None:
                continue
            x0, x1 = f.px(i + 0.1 + k * width), f.px(i + 0.1 + (k + 1) * width)
            out.append(f'<rect x="{x0:.1f}" y="{f.py(v):.1f}" width="{x1 - x0:.1f}" '
                       f'height="{f.py(0) - f.py(v):.1f}" fill="{c}"/>')
    if len(series) > 1:
        out += _legend(series)
    return _doc(out)
