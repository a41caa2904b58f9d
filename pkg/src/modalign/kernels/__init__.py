"""Convolution kernels: compiled extension if available, numpy fallback otherwise.

The two backends compute the same quantities; results may differ in the last
float bits because summation order differs.  The compiled loops win when the
channel product is small (the first encoder convolutions); the numpy fallback
rides BLAS and wins once I*O gets large, so with the extension present each
call is routed by that product.  Set MODALIGN_NO_EXT=1 to force pure numpy.
"""

import os

from . import numpy_backend

if os.environ.get("MODALIGN_NO_EXT"):
    _ext = None
    BACKEND = "numpy"
else:
    try:
        from . import _conv_cy as _ext
        BACKEND = "cython"
    except ImportError:
        _ext = None
        BACKEND = "numpy"

# measured crossover: cython wins below ~128 in-times-out channels
_CHANNEL_CUTOFF = 128

if _ext is None:
    conv2d_forward = numpy_backend.conv2d_forward
    conv2d_grad_input = numpy_backend.conv2d_grad_input
    conv2d_grad_kernel = numpy_backend.conv2d_grad_kernel
else:
    def conv2d_forward(x, k, pad_h, pad_w):
        impl = _ext if k.shape[0] * k.shape[1] <= _CHANNEL_CUTOFF else numpy_backend
        return impl.conv2d_forward(x, k, pad_h, pad_w)

    def conv2d_grad_input(gy, k, pad_h, pad_w, h, w):
        impl = _ext if k.shape[0] * k.shape[1] <= _CHANNEL_CUTOFF else numpy_backend
        return impl.conv2d_grad_input(gy, k, pad_h, pad_w, h, w)

    def conv2d_grad_kernel(gy, x, kh, kw, pad_h, pad_w):
        # the kernel gradient reduces over batch and space, which BLAS handles
        # well, so the compiled loop only pays off at very small channel counts
        impl = _ext if gy.shape[1] * x.shape[1] <= 32 else numpy_backend
        return impl.conv2d_grad_kernel(gy, x, kh, kw, pad_h, pad_w)

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_grad_input",
    "conv2d_grad_kernel",
    "numpy_backend",
]
