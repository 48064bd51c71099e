"""Self-contained SVG charts: line overlays, scatter plots and signed heatmaps."""

from __future__ import annotations

from html import escape
from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 640, 360
PAD = 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _frame(body: list[str], title: str, width=WIDTH, height=HEIGHT) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    t = f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>'
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', t, *body, "</svg>"]) + "\n"


def _span(lo, hi):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return 0.0, 1.0
    if hi == lo:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Axes:
    def __init__(self, xlim, ylim, width=WIDTH, height=HEIGHT):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        self.w, self.h = width, height

    def px(self, x):
        return PAD + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * (self.w - 2 * PAD)

    def py(self, y):
        return self.h - PAD - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * (self.h - 2 * PAD)

    def decor(self, xlabel, ylabel) -> list[str]:
        out = [f'<rect x="{PAD}" y="{PAD}" width="{self.w - 2 * PAD}" height="{self.h - 2 * PAD}" '
               'fill="none" stroke="#444"/>']
        for v in np.linspace(self.x0, self.x1, 5):
            out.append(f'<text x="{self.px(v):.1f}" y="{self.h - PAD + 14}" '
                       f'text-anchor="middle">{v:.4g}</text>')
        for v in np.linspace(self.y0, self.y1, 5):
            out.append(f'<text x="{PAD - 4}" y="{self.py(v) + 4:.1f}" text-anchor="end">{v:.4g}</text>')
        out.append(f'<text x="{self.w / 2:.1f}" y="{self.h - 8}" text-anchor="middle">'
                   f'{escape(xlabel)}</text>')
        out.append(f'<text x="12" y="{self.h / 2:.1f}" text-anchor="middle" '
                   f'transform="rotate(-90 12 {self.h / 2:.1f})">{escape(ylabel)}</text>')
        return out


def _polyline(ax, x, y, color, dash=None):
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(ax.px(x), ax.py(y)))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>'


def _legend(labels, colors) -> list[str]:
    out = []
    for i, (lab, c) in enumerate(zip(labels, colors)):
        y = PAD + 12 + 14 * i
        out.append(f'<line x1="{WIDTH - PAD - 110}" x2="{WIDTH - PAD - 92}" y1="{y - 4}" y2="{y - 4}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{WIDTH - PAD - 88}" y="{y}">{escape(lab)}</text>')
    return out


def line_chart(series: dict, path, *, title="", xlabel="step", ylabel="", marker=None) -> Path:
    """``series`` maps label -> y values (x = 1..n); ``marker`` draws a vertical line."""
    ys = [np.asarray(v, float) for v in series.values()]
    n = max(len(y) for y in ys)
    lo = min(float(np.nanmin(y)) for y in ys if len(y))
    hi = max(float(np.nanmax(y)) for y in ys if len(y))
    ax = _Axes((1, max(n, 2)), _span(lo, hi))
    body = ax.decor(xlabel, ylabel)
    colors = PALETTE[:len(ys)]
    for y, c in zip(ys, colors):
        body.append(_polyline(ax, np.arange(1, len(y) + 1), y, c))
    if marker is not None:
        x = float(ax.px(marker))
        body.append(f'<line x1="{x:.2f}" x2="{x:.2f}" y1="{PAD}" y2="{HEIGHT - PAD}" '
                    'stroke="#777" stroke-dasharray="4 3"/>')
    body += _legend(list(series), colors)
    return _write(path, _frame(body, title))


def scatter(truth, pred, path, *, title="", xlabel="truth", ylabel="prediction") -> Path:
    """Prediction vs truth with the identity line."""
    t = np.asarray(truth, float).ravel()
    p = np.asarray(pred, float).ravel()
    lim = _span(float(min(t.min(), p.min())), float(max(t.max(), p.max())))
    ax = _Axes(lim, lim, width=HEIGHT + 80, height=HEIGHT)
    body = ax.decor(xlabel, ylabel)
    body.append(_polyline(ax, lim, lim, "#999", dash="4 3"))
    for a, b in zip(ax.px(t), ax.py(p)):
        body.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="1.6" fill="{PALETTE[0]}" fill-opacity="0.5"/>')
    return _write(path, _frame(body, title, width=HEIGHT + 80))


def diverging_color(v: float, vmax: float) -> str:
    """Blue for negative, white at 0, red for positive."""
    if vmax <= 0 or not np.isfinite(v):
        return "#ffffff"
    s = float(np.clip(v / vmax, -1.0, 1.0))
    fade = int(round(255 * (1 - abs(s))))
    return f"#ff{fade:02x}{fade:02x}" if s >= 0 else f"#{fade:02x}{fade:02x}ff"


def heatmap(matrix, path, *, title="", xlabel="lookback position", ylabel="window") -> Path:
    """Signed heatmap, symmetric color scale so the sign carries direction."""
    m = np.asarray(matrix, float)
    rows, cols = m.shape
    vmax = float(np.nanmax(np.abs(m))) if m.size else 0.0
    cw = (WIDTH - 2 * PAD - 40) / max(cols, 1)
    ch = (HEIGHT - 2 * PAD) / max(rows, 1)
    body = []
    for i in range(rows):
        for j in range(cols):
            body.append(f'<rect x="{PAD + j * cw:.2f}" y="{PAD + i * ch:.2f}" width="{cw + 0.3:.2f}" '
                        f'height="{ch + 0.3:.2f}" fill="{diverging_color(m[i, j], vmax)}"/>')
    body.append(f'<rect x="{PAD}" y="{PAD}" width="{cols * cw:.2f}" height="{rows * ch:.2f}" '
                'fill="none" stroke="#444"/>')
    for j in (0, cols // 2, cols - 1):
        body.append(f'<text x="{PAD + (j + 0.5) * cw:.1f}" y="{HEIGHT - PAD + 14}" '
                    f'text-anchor="middle">{j + 1}</text>')
    body.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    body.append(f'<text x="12" y="{HEIGHT / 2:.1f}" text-anchor="middle" '
                f'transform="rotate(-90 12 {HEIGHT / 2:.1f})">{escape(ylabel)}</text>')
    # color bar
    x = WIDTH - PAD - 20
    for k in range(21):
        v = vmax * (1 - k / 10)
        body.append(f'<rect x="{x}" y="{PAD + k * (HEIGHT - 2 * PAD) / 21:.2f}" width="12" '
                    f'height="{(HEIGHT - 2 * PAD) / 21 + 0.3:.2f}" fill="{diverging_color(v, vmax)}"/>')
    body.append(f'<text x="{x + 6}" y="{PAD - 4}" text-anchor="middle">{vmax:+.3g}</text>')
    body.append(f'<text x="{x + 6}" y="{HEIGHT - PAD + 12}" text-anchor="middle">{-vmax:+.3g}</text>')
    return _write(path, _frame(body, title))


def bar_chart(labels, values, path, *, title="", ylabel="") -> Path:
    v = np.asarray(values, float)
    ax = _Axes((0, len(v)), _span(min(0.0, float(v.min())), float(v.max())))
    body = [f'<rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" height="{HEIGHT - 2 * PAD}" '
            'fill="none" stroke="#444"/>']
    bw = (WIDTH - 2 * PAD) / max(len(v), 1)
    zero = float(ax.py(0.0))
    for i, (lab, val) in enumerate(zip(labels, v)):
        top = float(ax.py(val))
        body.append(f'<rect x="{PAD + i * bw + bw * 0.15:.2f}" y="{min(top, zero):.2f}" '
                    f'width="{bw * 0.7:.2f}" height="{abs(zero - top):.2f}" fill="{PALETTE[0]}"/>')
        body.append(f'<text x="{PAD + (i + 0.5) * bw:.1f}" y="{HEIGHT - PAD + 14}" '
                    f'text-anchor="middle">{escape(str(lab))}</text>')
        body.append(f'<text x="{PAD + (i + 0.5) * bw:.1f}" y="{min(top, zero) - 3:.1f}" '
                    f'text-anchor="middle">{val:.4g}</text>')
    body.append(f'<text x="12" y="{HEIGHT / 2:.1f}" text-anchor="middle" '
                f'transform="rotate(-90 12 {HEIGHT / 2:.1f})">{escape(ylabel)}</text>')
    return _write(path, _frame(body, title))


def _write(path, text) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


__all__ = ["line_chart", "scatter", "heatmap", "bar_chart", "diverging_color"]
