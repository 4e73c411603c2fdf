"""Minimal hand-rolled SVG region maps: one colored cell per grid point.

Output is deterministic byte-for-byte for identical inputs.  Canvas 720x680,
plot area 600x560 with a 70px left/top margin; palette below.
"""

from __future__ import annotations

PALETTE = {
    "S": "#4caf50",
    "S1": "#2196f3",
    "S2": "#ff9800",
    "U": "#f44336",
    "B": "#9e9e9e",
    "ERR": "#212121",
}

_CANVAS_W = 720
_CANVAS_H = 680
_MARGIN_L = 70
_MARGIN_T = 40
_PLOT_W = 600
_PLOT_H = 560


def render_region_svg(xs, ys, labels, title: str = "") -> str:
    """Colored-cell map of a two-axis sweep.

    ``labels[iy][ix]`` is the region code of grid point ``(xs[ix], ys[iy])``;
    the y axis points up.
    """
    nx, ny = len(xs), len(ys)
    if ny != len(labels) or any(len(row) != nx for row in labels):
        raise ValueError("label grid shape does not match axes")
    cw = _PLOT_W / nx
    ch = _PLOT_H / ny
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS_W}" '
        f'height="{_CANVAS_H}" viewBox="0 0 {_CANVAS_W} {_CANVAS_H}">',
        f'<rect x="0" y="0" width="{_CANVAS_W}" height="{_CANVAS_H}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_MARGIN_L}" y="24" font-family="monospace" '
            f'font-size="14">{_escape(title)}</text>'
        )
    for iy in range(ny):
        for ix in range(nx):
            code = labels[iy][ix]
            color = PALETTE.get(code, PALETTE["ERR"])
            x = _MARGIN_L + ix * cw
            y = _MARGIN_T + (ny - 1 - iy) * ch
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw:.2f}" '
                f'height="{ch:.2f}" fill="{color}"/>'
            )
    parts.append(
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{_PLOT_W}" '
        f'height="{_PLOT_H}" fill="none" stroke="#000000"/>'
    )
    tick_x = max(1, nx // 6)
    for ix in range(0, nx, tick_x):
        x = _MARGIN_L + (ix + 0.5) * cw
        parts.append(
            f'<text x="{x:.2f}" y="{_MARGIN_T + _PLOT_H + 18}" '
            f'font-family="monospace" font-size="11" '
            f'text-anchor="middle">{xs[ix]:.3g}</text>'
        )
    tick_y = max(1, ny // 6)
    for iy in range(0, ny, tick_y):
        y = _MARGIN_T + (ny - 1 - iy + 0.5) * ch
        parts.append(
            f'<text x="{_MARGIN_L - 8}" y="{y:.2f}" font-family="monospace" '
            f'font-size="11" text-anchor="end">{ys[iy]:.3g}</text>'
        )
    parts.append(
        f'<text x="{_MARGIN_L + _PLOT_W / 2:.2f}" y="{_MARGIN_T + _PLOT_H + 38}" '
        f'font-family="monospace" font-size="12" text-anchor="middle">arrival rate 1</text>'
    )
    parts.append(
        f'<text x="18" y="{_MARGIN_T + _PLOT_H / 2:.2f}" font-family="monospace" '
        f'font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 18 {_MARGIN_T + _PLOT_H / 2:.2f})">arrival rate 2</text>'
    )
    lx = _MARGIN_L
    ly = _MARGIN_T + _PLOT_H + 52
    for code in ("S", "S1", "S2", "U", "B"):
        parts.append(
            f'<rect x="{lx}" y="{ly}" width="14" height="14" fill="{PALETTE[code]}"/>'
        )
        parts.append(
            f'<text x="{lx + 18}" y="{ly + 11}" font-family="monospace" '
            f'font-size="11">{code}</text>'
        )
        lx += 60 + 10 * len(code)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )
