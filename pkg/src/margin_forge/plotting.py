"""Per-class error bar chart written as plain SVG."""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import ParseError
from .imbalance_data import majority_mask

WIDTH, HEIGHT = 640, 360
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 56, 16, 28, 48
GROUP_GAP = 24
COLORS = {"majority": "#4c72b0", "minority": "#dd8452"}


def read_per_class_csv(path) -> list[tuple[str, float, int]]:
    """Rows of (class, error, count). Errors name the offending line."""
    rows = []
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: line 1: empty file")
        try:
            ci, ei, ni = (header.index(c) for c in ("class", "error", "count"))
        except ValueError:
            raise ParseError(f"{path}: line 1: header must contain class, error, count") from None
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                error = float(row[ei])
                count = int(row[ni])
                rows.append((row[ci], error, count))
            except (IndexError, ValueError):
                raise ParseError(f"{path}: line {line_no}: malformed row {row!r}") from None
            if not 0 <= error <= 1 or count < 0:
                raise ParseError(f"{path}: line {line_no}: error must be in [0, 1] and count >= 0")
    if not rows:
        raise ParseError(f"{path}: line 2: no data rows")
    return rows


def render_svg(rows: list[tuple[str, float, int]]) -> str:
    # majority classes first, each group ordered by decreasing count
    major = majority_mask([max(n, 1) for _, _, n in rows])
    order = sorted(range(len(rows)), key=lambda i: (not major[i], -rows[i][2], i))
    n_bars = len(rows)
    n_minor = int((~major).sum())
    gap = GROUP_GAP if 0 < n_minor < n_bars else 0
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT - gap
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    slot = plot_w / n_bars
    bar_w = slot * 0.7
    base_y = MARGIN_TOP + plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" '
        'font-size="13">Per-class top-1 error</text>',
        f'<line x1="{MARGIN_LEFT}" y1="{base_y}" x2="{WIDTH - MARGIN_RIGHT}" y2="{base_y}" stroke="black"/>',
        f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{base_y}" stroke="black"/>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        ty = base_y - tick * plot_h
        out.append(f'<text x="{MARGIN_LEFT - 6}" y="{ty + 4:.1f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="10">{tick:.2f}</text>')
    for pos, i in enumerate(order):
        name, error, count = rows[i]
        group = "majority" if major[i] else "minority"
        x = MARGIN_LEFT + pos * slot + (slot - bar_w) / 2 + (gap if not major[i] else 0)
        h = error * plot_h
        out.append(
            f'<rect class="bar {group}" x="{x:.2f}" y="{base_y - h:.2f}" width="{bar_w:.2f}" '
            f'height="{h:.2f}" fill="{COLORS[group]}"><title>{escape(name)}: {error:.4f} '
            f'(n={count})</title></rect>')
        out.append(f'<text x="{x + bar_w / 2:.2f}" y="{base_y + 14}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{escape(name)}</text>')
    if gap:
        sep_x = MARGIN_LEFT + (n_bars - n_minor) * slot + gap / 2
        out.append(f'<line x1="{sep_x:.2f}" y1="{MARGIN_TOP}" x2="{sep_x:.2f}" y2="{base_y}" '
                   'stroke="grey" stroke-dasharray="4 3"/>')
    out.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" '
               'font-family="sans-serif" font-size="11">class (majority | minority)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_per_class(per_class_csv_path, out_svg_path) -> None:
    svg = render_svg(read_per_class_csv(per_class_csv_path))
    Path(out_svg_path).write_text(svg)
