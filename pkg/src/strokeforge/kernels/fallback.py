"""NumPy / pure-Python implementations of the hot kernels.

These are the reference versions used when the compiled extension has not
been built (or is disabled via STROKEFORGE_PURE_PYTHON=1).  The compiled
module in ``_ckernels.pyx`` mirrors these signatures exactly and must
produce bit-identical results; ``tests/test_kernels.py`` enforces that.
"""

import numpy as np


def im2col(padded, kh, kw, stride):
    """Lower convolution patches into a matrix.

    padded : float array [B, C, Hp, Wp], already zero padded.
    Returns an array [B, out_h * out_w, C * kh * kw] whose rows are the
    flattened receptive fields, ordered row-major over output positions.
    """
    b, c, hp, wp = padded.shape
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B, C, out_h, out_w, kh, kw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, out_h * out_w, c * kh * kw)
    return np.ascontiguousarray(cols)


def col2im(cols, b, c, hp, wp, kh, kw, stride):
    """Adjoint of :func:`im2col`: scatter-add patch values back onto the image.

    cols : float array [B, out_h * out_w, C * kh * kw]
    Returns an array [B, C, Hp, Wp].
    """
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    image = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    patches = cols.reshape(b, out_h, out_w, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            image[:, :, i : i + out_h * stride : stride, j : j + out_w * stride : stride] += patches[
                :, :, :, :, i, j
            ]
    return image


def draw_lines(image, segments):
    """Rasterize integer segments into ``image`` in place (Bresenham, 1 px).

    image    : float32 array [H, W]; lit pixels are set to 1.0.
    segments : int64 array [N, 4] of (x0, y0, x1, y1) pixel coordinates.
    Pixels falling outside the image are clipped.  Returns ``image``.
    """
    h, w = image.shape
    for x0, y0, x1, y1 in segments:
        x0 = int(x0)
        y0 = int(y0)
        x1 = int(x1)
        y1 = int(y1)
        dx = abs(x1 - x0)
        dy = -abs(y1 - y0)
        sx = 1 if x0 < x1 else -1
        sy = 1 if y0 < y1 else -1
        err = dx + dy
        x, y = x0, y0
        while True:
            if 0 <= x < w and 0 <= y < h:
                image[y, x] = 1.0
            if x == x1 and y == y1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x += sx
            if e2 <= dx:
                err += dx
                y += sy
    return image
