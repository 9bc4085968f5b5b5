"""Render partial stroke sequences into normalized grayscale rasters.

Ink is 1.0, background 0.0 (mapping a dark pixel value v to 1 - v/255).
Lines are 1-pixel Bresenham segments with no anti-aliasing, so renders are
deterministic and bit-exact across backends.
"""

import numpy as np

from .data import PEN_DOWN, stroke5_to_absolute
from .kernels import draw_lines

RASTER_SIZE = 128
MARGIN = 5


def normalize_rgb(r, g, b):
    """Map 8-bit (r, g, b) to the dark-is-one convention: 1 - v / 255."""
    for name, v in (("r", r), ("g", g), ("b", b)):
        if not 0 <= v <= 255:
            raise ValueError(f"normalize_rgb: channel {name}={v} outside [0, 255]")
    return (1.0 - r / 255.0, 1.0 - g / 255.0, 1.0 - b / 255.0)


def rgb_to_ink(r, g, b):
    """Grayscale ink value: mean of the normalized channels."""
    rp, gp, bp = normalize_rgb(r, g, b)
    return (rp + gp + bp) / 3.0


def transform_points(absolute, size, viewport=None):
    """Map absolute coordinates into pixel space.

    Default mode fits the bounding box into a centered (size - 2*MARGIN)
    viewport, preserving aspect.  A fixed ``viewport`` (xmin, ymin, xmax,
    ymax) in absolute units overrides the fit, which makes prefix renders
    comparable to full renders.
    """
    if viewport is None:
        lo = absolute.min(axis=0)
        hi = absolute.max(axis=0)
    else:
        lo = np.asarray(viewport[:2], dtype=np.float64)
        hi = np.asarray(viewport[2:], dtype=np.float64)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1]))
    usable = size - 2 * MARGIN - 1
    scale = usable / span if span > 0 else 1.0
    center = (lo + hi) / 2.0
    half = (size - 1) / 2.0
    return (absolute - center) * scale + half


def render(sequence, offset_scale=1.0, size=RASTER_SIZE, viewport=None):
    """Rasterize a stroke sequence (or prefix) to a [size, size] float32 image.

    Offsets are denormalized by ``offset_scale``, accumulated into absolute
    positions starting from the origin anchor, fitted, and drawn.  Segments
    are inked only where the earlier point's pen state is p1; every pen
    position gets its pixel lit.  Note the bounding-box fit makes the
    output independent of ``offset_scale`` unless ``viewport`` is fixed.
    """
    points = np.asarray(sequence.points if hasattr(sequence, "points") else sequence, dtype=np.float32)
    absolute = stroke5_to_absolute(points)
    absolute *= float(offset_scale)
    pixels = np.rint(transform_points(absolute, size, viewport)).astype(np.int64)

    image = np.zeros((size, size), dtype=np.float32)
    # pen-down flags for each transition; the implicit anchor is pen-down
    pen_down = np.ones(len(absolute) - 1, dtype=bool)
    if len(points) > 1:
        pen_down[1:] = points[:-1, PEN_DOWN] == 1

    segments = np.concatenate([pixels[:-1], pixels[1:]], axis=1)[pen_down]
    if len(segments):
        draw_lines(image, np.ascontiguousarray(segments))
    # every recorded position is a pen touch even if no segment reaches it
    inside = (pixels[:, 0] >= 0) & (pixels[:, 0] < size) & (pixels[:, 1] >= 0) & (pixels[:, 1] < size)
    image[pixels[inside, 1], pixels[inside, 0]] = 1.0
    return image


def bounding_box(sequence, offset_scale=1.0):
    """(xmin, ymin, xmax, ymax) of the absolute positions, anchor included."""
    absolute = stroke5_to_absolute(np.asarray(sequence.points if hasattr(sequence, "points") else sequence))
    absolute *= float(offset_scale)
    lo = absolute.min(axis=0)
    hi = absolute.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))
