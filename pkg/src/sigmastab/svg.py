"""Minimal SVG rendering of sigma-stability maps (polylines over shaded cells)."""
from __future__ import annotations

import colorsys
from xml.sax.saxutils import escape

import numpy as np

from .boundaries import DIFF_OP, REAL_ROOT

WIDTH, HEIGHT = 640, 480
MARGIN = 56


def _color(k: int, n: int) -> str:
    hue = 0.66 * (1 - k / max(n - 1, 1))
    r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.8)
    return f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}"


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def _trim_mask(m, pts):
    """Keep curve points lying in, or next to, a region cell."""
    dkp, dki = m.cell_size
    i = np.floor((pts[:, 0] - m.kp_centers[0]) / dkp + 0.5).astype(int)
    j = np.floor((pts[:, 1] - m.ki_centers[0]) / dki + 0.5).astype(int)
    ok = np.zeros(len(pts), dtype=bool)
    mask = m.d_sigma
    n0, n1 = mask.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            ii, jj = i + di, j + dj
            inside = (ii >= 0) & (ii < n0) & (jj >= 0) & (jj < n1)
            ok[inside] |= mask[ii[inside], jj[inside]]
    return ok


def render_map(maps, kp_range, ki_range, *, trim: bool = True, title: str = "") -> str:
    """SVG document with one colour per abscissa: shaded region cells and boundary polylines.

    With ``trim`` the curves are clipped to the neighbourhood of the shaded
    region, which is how stability charts are usually drawn; the CSV output
    keeps the full curves.
    """
    x0, x1 = map(float, kp_range)
    y0, y1 = map(float, ki_range)
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def X(v):
        return MARGIN + (np.asarray(v) - x0) / (x1 - x0) * pw

    def Y(v):
        return HEIGHT - MARGIN - (np.asarray(v) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<clipPath id="plot"><rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}"/>'
           '</clipPath>']
    n = len(maps)
    for k, m in enumerate(maps):
        col = _color(k, n)
        dkp, dki = m.cell_size
        w = dkp / (x1 - x0) * pw
        hgt = dki / (y1 - y0) * ph
        cells = []
        for i, j in zip(*np.nonzero(m.d_sigma)):
            cx, cy = float(X(m.kp_centers[i] - dkp / 2)), float(Y(m.ki_centers[j] + dki / 2))
            cells.append(f'<rect x="{cx:.2f}" y="{cy:.2f}" width="{w:.2f}" height="{hgt:.2f}"/>')
        if cells:
            out.append(f'<g fill="{col}" fill-opacity="0.25" stroke="none">')
            out.extend(cells)
            out.append("</g>")
        out.append(f'<g fill="none" stroke="{col}" stroke-width="1.4" clip-path="url(#plot)">')
        for c in m.curves:
            pts = c.samples[:, :2]
            if c.kind == DIFF_OP:
                continue
            keep = _trim_mask(m, pts) if trim and m.d_sigma.any() else np.ones(len(pts), bool)
            dash = ' stroke-dasharray="4 3"' if c.kind == REAL_ROOT else ""
            # split at trimmed points so that gaps are not bridged
            edges = np.flatnonzero(np.diff(np.concatenate(([0], keep.astype(int), [0]))))
            for a, b in zip(edges[::2], edges[1::2]):
                if b - a < 2:
                    continue
                xy = " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(X(pts[a:b, 0]), Y(pts[a:b, 1])))
                out.append(f'<polyline points="{xy}"{dash}/>')
        out.append("</g>")
        out.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * k + 10}" fill="{col}">'
                   f'σ={_fmt(m.sigma)}</text>')
    # frame, ticks, labels
    out.append(f'<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" '
               'stroke="black"/>')
    for v in np.linspace(x0, x1, 5):
        out.append(f'<text x="{float(X(v)):.2f}" y="{HEIGHT - MARGIN + 16}" '
                   f'text-anchor="middle">{_fmt(v)}</text>')
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{MARGIN - 6}" y="{float(Y(v)) + 4:.2f}" '
                   f'text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<text x="{MARGIN + pw / 2}" y="{HEIGHT - 12}" text-anchor="middle">kp</text>')
    out.append(f'<text x="14" y="{MARGIN + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {MARGIN + ph / 2})">ki</text>')
    if title:
        out.append(f'<text x="{MARGIN}" y="{MARGIN - 12}">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
