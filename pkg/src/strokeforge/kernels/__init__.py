"""Hot numeric kernels with a compiled fast path.

The Cython extension ``_ckernels`` implements im2col/col2im patch lowering
for the convolution layers and Bresenham line drawing for the rasterizer.
A NumPy fallback with identical semantics is used when the extension has
not been built.  Set STROKEFORGE_PURE_PYTHON=1 to force the fallback;
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import fallback

if os.environ.get("STROKEFORGE_PURE_PYTHON", "") not in ("", "0"):
    _impl = fallback
    BACKEND = "fallback"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = fallback
        BACKEND = "fallback"

im2col = _impl.im2col
col2im = _impl.col2im
draw_lines = _impl.draw_lines

__all__ = ["BACKEND", "im2col", "col2im", "draw_lines", "fallback"]
