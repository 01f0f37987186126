"""Minimal self-contained SVG emitters for importance bars, dependence scatters and the effect grid."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape


def _svg(width, height, body) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
        + "\n".join(body) + "\n</svg>\n"
    )


def bar_chart(labels, values, title="") -> str:
    bar_h, left, width = 18, 110, 520
    height = 40 + bar_h * len(labels)
    vmax = max([v for v in values if v > 0] or [1.0])
    body = [f'<text x="{left}" y="16" font-weight="bold">{escape(title)}</text>']
    for i, (lab, v) in enumerate(zip(labels, values)):
        y = 28 + i * bar_h
        w = max(0.0, v) / vmax * (width - left - 60)
        body.append(f'<text x="{left - 6}" y="{y + 12}" text-anchor="end">{escape(str(lab))}</text>')
        body.append(f'<rect x="{left}" y="{y}" width="{w:.2f}" height="{bar_h - 4}" fill="#4878a8"/>')
        body.append(f'<text x="{left + w + 4:.2f}" y="{y + 12}">{v:.3f}</text>')
    return _svg(width, height, body)


def scatter(xs, ys, xlabel="", ylabel="", title="") -> str:
    width, height, pad = 420, 320, 46
    xs, ys = list(xs), list(ys)
    body = [f'<text x="{pad}" y="16" font-weight="bold">{escape(title)}</text>']
    if xs:
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys + [0.0]), max(ys + [0.0])
        sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
        sy = (height - 2 * pad) / ((y1 - y0) or 1.0)
        zero = height - pad - (0.0 - y0) * sy
        body.append(f'<line x1="{pad}" y1="{zero:.2f}" x2="{width - pad}" y2="{zero:.2f}" stroke="#999"/>')
        for x, y in zip(xs, ys):
            cx = pad + (x - x0) * sx
            cy = height - pad - (y - y0) * sy
            body.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2.5" fill="#c44e52" fill-opacity="0.6"/>')
    body.append(f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    body.append(f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
                f'text-anchor="middle">{escape(ylabel)}</text>')
    return _svg(width, height, body)


def effect_grid(treatments, outcomes, cells) -> str:
    """Annotated grid; ``cells[(t, o)] = (odds_ratio, stars)``. Red raises risk, blue lowers it."""
    cw, ch, left, top = 96, 26, 90, 40
    width = left + cw * len(outcomes) + 10
    height = top + ch * len(treatments) + 10
    body = []
    for j, o in enumerate(outcomes):
        body.append(f'<text x="{left + j * cw + cw / 2}" y="{top - 8}" text-anchor="middle">{escape(str(o))}</text>')
    for i, t in enumerate(treatments):
        y = top + i * ch
        body.append(f'<text x="{left - 6}" y="{y + 17}" text-anchor="end">{escape(str(t))}</text>')
        for j, o in enumerate(outcomes):
            x = left + j * cw
            cell = cells.get((t, o))
            if cell is None:
                body.append(f'<rect x="{x}" y="{y}" width="{cw - 2}" height="{ch - 2}" fill="#ddd"/>')
                continue
            or_, stars = cell
            s = max(-1.0, min(1.0, math.log(or_) / math.log(3))) if or_ > 0 else 0.0
            r, g, b = (255, int(255 * (1 - s)), int(255 * (1 - s))) if s >= 0 else \
                (int(255 * (1 + s)), int(255 * (1 + s)), 255)
            body.append(f'<rect x="{x}" y="{y}" width="{cw - 2}" height="{ch - 2}" fill="rgb({r},{g},{b})"/>')
            body.append(f'<text x="{x + cw / 2}" y="{y + 17}" text-anchor="middle">{or_:.3f}{escape(stars)}</text>')
    return _svg(width, height, body)
