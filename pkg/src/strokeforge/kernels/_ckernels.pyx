# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (see fallback.py for contracts)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] padded, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = padded.shape[0]
    cdef Py_ssize_t c = padded.shape[1]
    cdef Py_ssize_t hp = padded.shape[2]
    cdef Py_ssize_t wp = padded.shape[3]
    cdef Py_ssize_t out_h = (hp - kh) // stride + 1
    cdef Py_ssize_t out_w = (wp - kw) // stride + 1

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    cols_arr = np.empty((b, out_h * out_w, c * kh * kw), dtype=dtype)
    cdef floating[:, :, ::1] cols = cols_arr

    cdef Py_ssize_t n, ch, oh, ow, i, j, row, col
    with nogil:
        for n in range(b):
            for oh in range(out_h):
                for ow in range(out_w):
                    row = oh * out_w + ow
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                col = (ch * kh + i) * kw + j
                                cols[n, row, col] = padded[n, ch, oh * stride + i, ow * stride + j]
    return cols_arr


def col2im(floating[:, :, ::1] cols, Py_ssize_t b, Py_ssize_t c, Py_ssize_t hp,
           Py_ssize_t wp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t out_h = (hp - kh) // stride + 1
    cdef Py_ssize_t out_w = (wp - kw) // stride + 1

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    image_arr = np.zeros((b, c, hp, wp), dtype=dtype)
    cdef floating[:, :, :, ::1] image = image_arr

    # (i, j) stays outermost so overlapping contributions accumulate in the
    # same order as the NumPy fallback, keeping results bit-identical.
    cdef Py_ssize_t n, ch, oh, ow, i, j, row, col
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for n in range(b):
                    for ch in range(c):
                        for oh in range(out_h):
                            for ow in range(out_w):
                                row = oh * out_w + ow
                                col = (ch * kh + i) * kw + j
                                image[n, ch, oh * stride + i, ow * stride + j] += cols[n, row, col]
    return image_arr


def draw_lines(float[:, ::1] image, cnp.int64_t[:, ::1] segments):
    cdef Py_ssize_t h = image.shape[0]
    cdef Py_ssize_t w = image.shape[1]
    cdef Py_ssize_t n_seg = segments.shape[0]
    cdef Py_ssize_t k
    cdef long x0, y0, x1, y1, dx, dy, sx, sy, err, e2, x, y

    with nogil:
        for k in range(n_seg):
            x0 = segments[k, 0]
            y0 = segments[k, 1]
            x1 = segments[k, 2]
            y1 = segments[k, 3]
            dx = x1 - x0 if x1 >= x0 else x0 - x1
            dy = -(y1 - y0 if y1 >= y0 else y0 - y1)
            sx = 1 if x0 < x1 else -1
            sy = 1 if y0 < y1 else -1
            err = dx + dy
            x = x0
            y = y0
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
    return np.asarray(image)
