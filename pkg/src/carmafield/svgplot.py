"""Tiny self-contained SVG plotting (no display server, no dependencies).

Just enough for the command line front end: overlaid line plots and a
downsampled heat map.  Output is a single standalone .svg file.
"""

from __future__ import annotations

import numpy as np

__all__ = ["line_plot", "heatmap"]

PALETTE = ["#1f5fa8", "#c23b22", "#2e8b57", "#6a3d9a", "#ff7f00", "#444444"]

# blue -> white -> red diverging stops for heat maps
_HEAT_STOPS = np.array(
    [[33, 102, 172], [103, 169, 207], [209, 229, 240],
     [247, 247, 247], [253, 219, 199], [239, 138, 98], [178, 24, 43]],
    dtype=float,
)


def _nice_ticks(lo, hi, target=5):
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        return [lo]
    span = hi - lo
    raw = span / target
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = np.ceil(lo / step) * step
    ticks = np.arange(first, hi + 0.5 * step, step)
    return [float(t) for t in ticks]


def _fmt(v):
    return f"{v:.6g}"


def line_plot(series, path, title="", xlabel="", ylabel="", size=(640, 420)):
    """Write overlaid polylines to an SVG file.

    ``series`` maps a label to an (x, y) pair of 1-D arrays.
    """
    width, height = size
    ml, mr, mt, mb = 62, 16, 34, 44
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    if x1 <= x0:
        x1 = x0 + 1.0
    if y1 <= y0:
        y1 = y0 + 1.0
    pad = 0.04 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
        'stroke="#333" stroke-width="1"/>',
    ]
    for t in _nice_ticks(x0, x1):
        x = px(t)
        out.append(
            f'<line x1="{x:.1f}" y1="{mt + ph}" x2="{x:.1f}" '
            f'y2="{mt + ph + 4}" stroke="#333"/>'
        )
        out.append(
            f'<text x="{x:.1f}" y="{mt + ph + 16}" font-size="11" '
            f'text-anchor="middle" font-family="sans-serif">{_fmt(t)}</text>'
        )
    for t in _nice_ticks(y0, y1):
        y = py(t)
        out.append(
            f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" stroke="#333"/>'
        )
        out.append(
            f'<text x="{ml - 7}" y="{y + 3.5:.1f}" font-size="11" '
            f'text-anchor="end" font-family="sans-serif">{_fmt(t)}</text>'
        )
    legend_y = mt + 14
    for idx, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(
            f"{px(float(a)):.2f},{py(float(b)):.2f}" for a, b in zip(x, y)
        )
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            'stroke-width="1.6"/>'
        )
        out.append(
            f'<line x1="{ml + pw - 130}" y1="{legend_y}" x2="{ml + pw - 106}" '
            f'y2="{legend_y}" stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{ml + pw - 100}" y="{legend_y + 4}" font-size="11" '
            f'font-family="sans-serif">{label}</text>'
        )
        legend_y += 16
    if title:
        out.append(
            f'<text x="{width / 2}" y="20" font-size="13" text-anchor="middle" '
            f'font-family="sans-serif">{title}</text>'
        )
    if xlabel:
        out.append(
            f'<text x="{ml + pw / 2}" y="{height - 10}" font-size="12" '
            f'text-anchor="middle" font-family="sans-serif">{xlabel}</text>'
        )
    if ylabel:
        out.append(
            f'<text x="16" y="{mt + ph / 2}" font-size="12" text-anchor="middle" '
            f'font-family="sans-serif" transform="rotate(-90 16 {mt + ph / 2})">'
            f"{ylabel}</text>"
        )
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def _heat_color(u):
    pos = u * (len(_HEAT_STOPS) - 1)
    k = int(np.clip(np.floor(pos), 0, len(_HEAT_STOPS) - 2))
    frac = pos - k
    rgb = (1 - frac) * _HEAT_STOPS[k] + frac * _HEAT_STOPS[k + 1]
    return "#%02x%02x%02x" % tuple(int(round(c)) for c in rgb)


def heatmap(values, path, title="", max_cells=128, size=520):
    """Write a 2-D array as a heat map, block-averaged to max_cells^2."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("heatmap needs a 2-D array")
    n1, n2 = values.shape
    f1 = max(1, int(np.ceil(n1 / max_cells)))
    f2 = max(1, int(np.ceil(n2 / max_cells)))
    trim = values[: (n1 // f1) * f1, : (n2 // f2) * f2]
    coarse = trim.reshape(trim.shape[0] // f1, f1, trim.shape[1] // f2, f2)
    coarse = coarse.mean(axis=(1, 3))
    lo, hi = float(np.min(coarse)), float(np.max(coarse))
    span = hi - lo if hi > lo else 1.0
    m1, m2 = coarse.shape
    cell = size / max(m1, m2)
    width, height = m2 * cell, m1 * cell + (26 if title else 0)
    top = 26 if title else 0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">'
    ]
    if title:
        out.append(
            f'<text x="{width / 2:.0f}" y="17" font-size="13" '
            f'text-anchor="middle" font-family="sans-serif">{title}</text>'
        )
    for i in range(m1):
        for j in range(m2):
            color = _heat_color((coarse[i, j] - lo) / span)
            out.append(
                f'<rect x="{j * cell:.2f}" y="{top + i * cell:.2f}" '
                f'width="{cell + 0.5:.2f}" height="{cell + 0.5:.2f}" '
                f'fill="{color}"/>'
            )
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out))
