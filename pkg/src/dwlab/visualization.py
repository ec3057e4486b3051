import html
from typing import List, Optional, Sequence

import matplotlib
import numpy as np
from matplotlib import cm


CELL_W = 84
CELL_H = 48
MARGIN_LEFT = 96
MARGIN_TOP = 56


def _rgb(normed) -> str:
    color = (255 * np.array(normed[:3])).round().astype(int)
    return f"rgb({color[0]},{color[1]},{color[2]})"


def _text_color(normed) -> str:
    r, g, b = normed[:3]
    return "#000000" if 0.299 * r + 0.587 * g + 0.114 * b > 0.5 else "#ffffff"


def format_value(v: Optional[float]) -> str:
    return "NA" if v is None or not np.isfinite(v) else f"{v:.3f}"


def heatmap_svg(
    values: Sequence[Sequence[Optional[float]]],
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    title: str,
    row_title: str = "depth",
    col_title: str = "width",
    cmap: str = "viridis",
) -> str:
    """
    A self-contained SVG heatmap with one annotated rectangle per cell. Colors scale linearly between the minimum
    and maximum defined values; undefined cells are grey and read "NA". The output depends only on the inputs.
    """
    matrix = np.array([[np.nan if v is None else float(v) for v in row] for row in values], dtype=np.float64)
    defined = matrix[np.isfinite(matrix)]
    vmin = float(defined.min()) if defined.size else 0.0
    vmax = float(defined.max()) if defined.size else 1.0
    if vmax == vmin:
        vmax = vmin + 1.0
    norm = cm.colors.Normalize(vmin=vmin, vmax=vmax)
    colormap = matplotlib.colormaps[cmap]

    n_rows, n_cols = matrix.shape
    width = MARGIN_LEFT + n_cols * CELL_W + 16
    height = MARGIN_TOP + n_rows * CELL_H + 40

    parts: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="13">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="15">{_escape(title)}</text>',
        f'<text x="{MARGIN_LEFT + n_cols * CELL_W / 2:.1f}" y="{height - 8}" text-anchor="middle">'
        f"{_escape(col_title)}</text>",
        f'<text x="14" y="{MARGIN_TOP + n_rows * CELL_H / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {MARGIN_TOP + n_rows * CELL_H / 2:.1f})">{_escape(row_title)}</text>',
    ]
    for j, label in enumerate(col_labels):
        x = MARGIN_LEFT + j * CELL_W + CELL_W / 2
        parts.append(f'<text x="{x:.1f}" y="{MARGIN_TOP - 8}" text-anchor="middle">{_escape(str(label))}</text>')
    for i, label in enumerate(row_labels):
        y = MARGIN_TOP + i * CELL_H + CELL_H / 2 + 4
        parts.append(f'<text x="{MARGIN_LEFT - 10}" y="{y:.1f}" text-anchor="end">{_escape(str(label))}</text>')
        for j in range(n_cols):
            v = matrix[i, j]
            x0 = MARGIN_LEFT + j * CELL_W
            y0 = MARGIN_TOP + i * CELL_H
            if np.isfinite(v):
                normed = colormap(norm(v))
                fill, ink, text = _rgb(normed), _text_color(normed), format_value(v)
            else:
                fill, ink, text = "rgb(200,200,200)", "#000000", "NA"
            parts.append(
                f'<rect x="{x0}" y="{y0}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#ffffff"/>'
            )
            parts.append(
                f'<text x="{x0 + CELL_W / 2:.1f}" y="{y0 + CELL_H / 2 + 4:.1f}" text-anchor="middle" '
                f'fill="{ink}">{text}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def matrix_csv(
    values: Sequence[Sequence[Optional[float]]],
    row_labels: Sequence[str],
    col_labels: Sequence[str],
    corner: str = "depth\\width",
) -> str:
    lines = [",".join([corner, *map(str, col_labels)])]
    for label, row in zip(row_labels, values):
        lines.append(",".join([str(label), *("NA" if v is None else repr(float(v)) for v in row)]))
    return "\n".join(lines) + "\n"


def _escape(s: str) -> str:
    return html.escape(s, quote=True)
