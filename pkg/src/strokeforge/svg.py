"""SVG writers: sketches as polylines, sketch grids, and embedding scatters."""

import numpy as np

from .data import PEN_DOWN, stroke5_to_absolute

STROKE_WIDTH = 2

_SCATTER_COLORS = ("#d62728", "#ff7f0e", "#1f77b4", "#2ca02c", "#9467bd", "#8c564b")


def _polylines(points, offset_scale=1.0):
    """Split a stroke-5 sequence into pen-down runs of absolute points.

    Segment j (position j -> j+1) is inked when the departure point's state
    is pen-down; the implicit origin anchor counts as pen-down.  Positions
    reached and left with the pen up become degenerate two-point runs so a
    round line cap still marks the touch.
    """
    points = np.asarray(points, dtype=np.float32).reshape(-1, 5)
    absolute = stroke5_to_absolute(points) * float(offset_scale)
    pen_down = np.ones(len(points), dtype=bool)
    if len(points) > 1:
        pen_down[1:] = points[:-1, PEN_DOWN] == 1
    runs = []
    current = None
    for j in range(len(points)):
        if pen_down[j]:
            if current is None:
                current = [absolute[j]]
            current.append(absolute[j + 1])
        else:
            if current is not None:
                runs.append(np.asarray(current))
                current = None
            if j + 1 == len(points) or not pen_down[j + 1]:
                runs.append(np.asarray([absolute[j + 1], absolute[j + 1]]))
    if current is not None:
        runs.append(np.asarray(current))
    return runs


def sketch_svg(sequence, offset_scale=1.0, pad=2.0):
    """Standalone SVG document for one sketch."""
    points = sequence.points if hasattr(sequence, "points") else sequence
    runs = _polylines(points, offset_scale)
    absolute = stroke5_to_absolute(np.asarray(points).reshape(-1, 5)) * float(offset_scale)
    lo = absolute.min(axis=0) - pad
    hi = absolute.max(axis=0) + pad
    width, height = hi - lo
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo[0]:.2f} {lo[1]:.2f} '
        f'{max(width, 1e-3):.2f} {max(height, 1e-3):.2f}">'
    ]
    for run in runs:
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in run)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="black" '
            f'stroke-width="{STROKE_WIDTH}" stroke-linecap="round"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def write_sketch_svg(path, sequence, offset_scale=1.0):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sketch_svg(sequence, offset_scale))


def grid_svg(sequences, offset_scale=1.0, columns=10, cell=100.0, pad=6.0):
    """Many sketches laid out on one page, each fitted to its own cell."""
    rows = -(-len(sequences) // columns)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {columns * cell:.0f} {rows * cell:.0f}">'
    ]
    usable = cell - 2 * pad
    for i, seq in enumerate(sequences):
        points = seq.points if hasattr(seq, "points") else seq
        absolute = stroke5_to_absolute(np.asarray(points).reshape(-1, 5)) * float(offset_scale)
        lo = absolute.min(axis=0)
        hi = absolute.max(axis=0)
        span = max(float((hi - lo).max()), 1e-6)
        scale = usable / span
        center = (lo + hi) / 2.0
        cx = (i % columns) * cell + cell / 2.0
        cy = (i // columns) * cell + cell / 2.0
        for run in _polylines(points, offset_scale):
            mapped = (run - center) * scale + (cx, cy)
            coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in mapped)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="black" stroke-width="1"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def scatter_svg(points, labels, size=640.0, radius=3.0):
    """2-D embedding scatter, one color per label, with a legend."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    scale = (size - 40.0) / span
    center = (lo + hi) / 2.0
    mapped = (points - center) * scale + size / 2.0
    unique = list(dict.fromkeys(labels.tolist()))
    color_of = {label: _SCATTER_COLORS[i % len(_SCATTER_COLORS)] for i, label in enumerate(unique)}
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {size:.0f} {size:.0f}">']
    for (x, y), label in zip(mapped, labels.tolist()):
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" fill="{color_of[label]}" fill-opacity="0.6"/>')
    for i, label in enumerate(unique):
        y = 20 + 18 * i
        parts.append(f'<circle cx="16" cy="{y}" r="5" fill="{color_of[label]}"/>')
        parts.append(f'<text x="28" y="{y + 4}" font-family="sans-serif" font-size="13">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_scatter_svg(path, points, labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scatter_svg(points, labels))
