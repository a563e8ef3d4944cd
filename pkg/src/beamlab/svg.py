"""Minimal SVG emitters: line plots (optionally log-log) and heatmaps."""
from __future__ import annotations

import numpy as np

W, H, PAD = 480, 360, 50


def _fmt(v):
    return f"{v:.6g}"


def _scale(v, lo, hi, a, b):
    if hi <= lo:
        return np.full_like(v, 0.5 * (a + b), dtype=float)
    return a + (v - lo) / (hi - lo) * (b - a)


def line_plot(path, series, title="", xlabel="", ylabel="", loglog=False):
    """``series``: list of ``(label, x, y)``."""
    xs, ys = [], []
    for _, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if loglog:
            keep = (x > 0) & (y > 0)
            x, y = np.log10(x[keep]), np.log10(y[keep])
        xs.append(x)
        ys.append(y)
    allx = np.concatenate(xs) if xs else np.zeros(1)
    ally = np.concatenate(ys) if ys else np.zeros(1)
    x0, x1 = float(np.min(allx)), float(np.max(allx))
    y0, y1 = float(np.min(ally)), float(np.max(ally))
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="12" y="{H / 2}" font-size="12" transform="rotate(-90 12 {H / 2})" text-anchor="middle">{ylabel}</text>',
        f'<text x="{PAD}" y="{H - PAD + 15}" font-size="10">{_fmt(x0)}</text>',
        f'<text x="{W - PAD}" y="{H - PAD + 15}" font-size="10" text-anchor="end">{_fmt(x1)}</text>',
        f'<text x="{PAD - 4}" y="{H - PAD}" font-size="10" text-anchor="end">{_fmt(y0)}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 10}" font-size="10" text-anchor="end">{_fmt(y1)}</text>',
    ]
    for j, ((label, _, _), x, y) in enumerate(zip(series, xs, ys)):
        px = _scale(x, x0, x1, PAD, W - PAD)
        py = _scale(y, y0, y1, H - PAD, PAD)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        c = colors[j % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{W - PAD - 4}" y="{PAD + 14 * (j + 1)}" font-size="11" fill="{c}" text-anchor="end">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def heatmap(path, values, title="", max_cells=128):
    """Grey-scale heatmap of a 2-D array (row 0 at the top), downsampled to ``max_cells``."""
    v = np.real(np.asarray(values, dtype=complex))
    step = max(1, int(np.ceil(max(v.shape) / max_cells)))
    v = v[::step, ::step]
    lo, hi = float(np.min(v)), float(np.max(v))
    s = np.clip(_scale(v, lo, hi, 0, 255), 0, 255).astype(int)
    ny, nx = s.shape
    cw = (W - 2 * PAD) / nx
    ch = (H - 2 * PAD) / ny
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{title} [{_fmt(lo)}, {_fmt(hi)}]</text>',
    ]
    for i in range(ny):
        for j in range(nx):
            g = s[i, j]
            out.append(
                f'<rect x="{PAD + j * cw:.2f}" y="{PAD + i * ch:.2f}" width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="rgb({g},{g},{g})"/>'
            )
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))
