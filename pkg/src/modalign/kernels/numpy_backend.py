"""Pure-numpy conv2d kernels (stride 1, explicit symmetric-ish padding).

All three routines loop over the small kernel footprint and hit numpy with
one vectorized accumulate per tap, which keeps memory flat (no im2col
materialization) while staying fast enough for desk-scale training.
"""

import numpy as np


def conv2d_forward(x, k, pad_h, pad_w):
    """Cross-correlation of x[B,C,H,W] with k[O,C,kh,kw], stride 1.

    Output spatial dims: H + 2*pad_h - kh + 1, W + 2*pad_w - kw + 1.
    """
    b, c, h, w = x.shape
    o, _, kh, kw = k.shape
    oh = h + 2 * pad_h - kh + 1
    ow = w + 2 * pad_w - kw + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    y = np.zeros((b, o, oh, ow), dtype=x.dtype)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u:u + oh, v:v + ow]
            y += np.einsum("bcij,oc->boij", patch, k[:, :, u, v], optimize=True)
    return y


def conv2d_grad_input(gy, k, pad_h, pad_w, h, w):
    """Gradient of conv2d_forward w.r.t. x (also the transposed convolution)."""
    b, o, oh, ow = gy.shape
    _, c, kh, kw = k.shape
    gxp = np.zeros((b, c, h + 2 * pad_h, w + 2 * pad_w), dtype=gy.dtype)
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + oh, v:v + ow] += np.einsum(
                "boij,oc->bcij", gy, k[:, :, u, v], optimize=True)
    return gxp[:, :, pad_h:pad_h + h, pad_w:pad_w + w]


def conv2d_grad_kernel(gy, x, kh, kw, pad_h, pad_w):
    """Gradient of conv2d_forward w.r.t. k."""
    b, o, oh, ow = gy.shape
    _, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad_h, pad_h), (pad_w, pad_w)))
    gk = np.zeros((o, c, kh, kw), dtype=gy.dtype)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u:u + oh, v:v + ow]
            gk[:, :, u, v] = np.einsum("boij,bcij->oc", gy, patch, optimize=True)
    return gk
