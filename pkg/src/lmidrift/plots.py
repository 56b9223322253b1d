"""Hand-written SVG figures with a fixed 800x400 viewBox. Output bytes depend
only on the inputs, so the files can be golden-tested."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import MetricError

WIDTH, HEIGHT = 800, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 30, 40, 50
GREEN = ((0xf7, 0xfc, 0xf5), (0x00, 0x6d, 0x2c))
PINK = ((0xff, 0xf0, 0xf5), (0xc5, 0x1b, 0x7d))


def _f(x) -> str:
    return f"{x:.2f}"


def _header(title):
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" '
        'font-family="sans-serif">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" font-size="15">{escape(title)}</text>',
    ]


def _write(lines, out):
    out = Path(out)
    out.write_text("\n".join(lines + ["</svg>"]) + "\n", encoding="utf-8")
    return out


def plot_lmi(distribution, vocab, out, annotate_top: int = 5, title: str = None):
    """Scatter of normalized LMI against vocabulary position (ids follow
    ascending token frequency); the ``annotate_top`` largest are labeled."""
    if distribution.degenerate:
        raise MetricError("cannot plot a degenerate LMI distribution; the label has no positive LMI mass")
    values = np.asarray(distribution.values)
    points = [[int(i), vocab.tokens[i], float(values[i])] for i in np.flatnonzero(values)]
    if title is None:
        title = f"LMI distribution, label {distribution.label}"
    return plot_lmi_points(points, len(vocab), out, annotate_top, title)


def plot_lmi_points(points, vocab_size: int, out, annotate_top: int = 5, title: str = "LMI distribution"):
    """``points`` are (vocab id, token, value) triples with value > 0."""
    if not points:
        raise MetricError("cannot plot an empty LMI distribution")
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B
    x0, y0 = MARGIN_L, HEIGHT - MARGIN_B
    vmax = max(p[2] for p in points)
    span = max(vocab_size - 1, 1)

    def xy(idx, val):
        return x0 + plot_w * idx / span, y0 - plot_h * val / vmax

    lines = _header(title)
    lines += [
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="#333333"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN_T}" stroke="#333333"/>',
        f'<text x="{x0 + plot_w // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">'
        'vocabulary (ascending frequency)</text>',
        f'<text x="{x0 - 8}" y="{_f(y0 - plot_h)}" text-anchor="end" font-size="11">{vmax:.3g}</text>',
        f'<text x="{x0 - 8}" y="{y0}" text-anchor="end" font-size="11">0</text>',
    ]
    for idx, _, val in points:
        x, y = xy(idx, val)
        lines.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="3" fill="#1f77b4" fill-opacity="0.8"/>')
    ranked = sorted(points, key=lambda p: (-p[2], p[0]))[:annotate_top]
    for rank, (idx, tok, val) in enumerate(ranked):
        x, y = xy(idx, val)
        ty = max(MARGIN_T + 12, y - 14 - 12 * (rank % 2))
        lines.append(f'<line x1="{_f(x)}" y1="{_f(y)}" x2="{_f(x)}" y2="{_f(ty + 3)}" stroke="#d62728"/>')
        lines.append(f'<text x="{_f(x)}" y="{_f(ty)}" text-anchor="middle" font-size="12" fill="#d62728">'
                     f'{escape(tok)}</text>')
    return _write(lines, out)


def _ramp(colors, t):
    (r0, g0, b0), (r1, g1, b1) = colors
    mix = lambda a, b: int(round(a + (b - a) * t))
    return f"#{mix(r0, r1):02x}{mix(g0, g1):02x}{mix(b0, b1):02x}"


def plot_confusion(matrix, labels, out, title: str = "Confusion matrix"):
    """Grid with rows = gold labels, columns = predictions. Diagonal cells use a
    green ramp, off-diagonal a pink ramp; darker means a larger count."""
    m = np.asarray(matrix, dtype=np.int64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {m.shape}")
    C = m.shape[0]
    if len(labels) != C:
        raise ValueError("one label per row/column is required")
    peak = int(m.max()) if m.size else 0
    cell = min((WIDTH - 260) / C, (HEIGHT - MARGIN_T - 70) / C)
    gx = (WIDTH - cell * C) / 2
    gy = MARGIN_T + 30
    lines = _header(title)
    lines.append(f'<text x="{_f(gx + cell * C / 2)}" y="{_f(gy - 10)}" text-anchor="middle" font-size="12">'
                 'predicted</text>')
    lines.append(f'<text x="{_f(gx - 60)}" y="{_f(gy + cell * C / 2)}" text-anchor="middle" font-size="12" '
                 f'transform="rotate(-90 {_f(gx - 60)} {_f(gy + cell * C / 2)})">gold</text>')
    for i in range(C):
        lines.append(f'<text x="{_f(gx - 8)}" y="{_f(gy + cell * (i + 0.5) + 4)}" text-anchor="end" '
                     f'font-size="12">{escape(str(labels[i]))}</text>')
        lines.append(f'<text x="{_f(gx + cell * (i + 0.5))}" y="{_f(gy + cell * C + 16)}" text-anchor="middle" '
                     f'font-size="12">{escape(str(labels[i]))}</text>')
    for i in range(C):
        for j in range(C):
            t = m[i, j] / peak if peak else 0.0
            fill = _ramp(GREEN if i == j else PINK, t)
            x, y = gx + cell * j, gy + cell * i
            ink = "#ffffff" if t > 0.6 else "#222222"
            lines.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cell)}" height="{_f(cell)}" fill="{fill}" '
                         'stroke="#ffffff"/>')
            lines.append(f'<text x="{_f(x + cell / 2)}" y="{_f(y + cell / 2 + 5)}" text-anchor="middle" '
                         f'font-size="14" fill="{ink}">{int(m[i, j])}</text>')
    return _write(lines, out)
