"""NumPy implementation of the convolution kernels.

im2col + GEMM for the forward pass, slice-accumulation col2im for the
backward pass.  Serves as the fallback when the compiled extension is not
available and as the ground truth the extension is benchmarked against.
Cross-correlation convention, zero padding.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

BACKEND = "numpy"


def _out_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _im2col(x, kh, kw, stride, padding):
    b, c, h, w = x.shape
    oh = _out_size(h, kh, stride, padding)
    ow = _out_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sb, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(b, c, kh, kw, oh, ow),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
    )
    return np.ascontiguousarray(view).reshape(b, c * kh * kw, oh * ow), oh, ow


def _col2im(dcols, x_shape, kh, kw, stride, padding):
    b, c, h, w = x_shape
    oh = _out_size(h, kh, stride, padding)
    ow = _out_size(w, kw, stride, padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    dxp = np.zeros((b, c, hp, wp), dtype=dcols.dtype)
    d6 = dcols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d6[
                :, :, i, j
            ]
    if padding:
        return np.ascontiguousarray(dxp[:, :, padding : padding + h, padding : padding + w])
    return dxp


def conv2d_forward(x, w, stride, padding):
    """x: [B, Cin, H, W], w: [Cout, Cin, kh, kw] -> [B, Cout, OH, OW]."""
    b = x.shape[0]
    cout, _, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, padding)
    w2 = w.reshape(cout, -1)
    out = np.matmul(w2[None], cols)
    return out.reshape(b, cout, oh, ow)


def conv2d_backward(x, w, dout, stride, padding):
    """Gradients of conv2d_forward w.r.t. input and weights."""
    b = x.shape[0]
    cout, _, kh, kw = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, padding)
    d2 = dout.reshape(b, cout, oh * ow)
    w2 = w.reshape(cout, -1)
    dw = np.einsum("bop,bkp->ok", d2, cols, dtype=np.float64)
    dcols = np.matmul(w2.T[None], d2)
    dx = _col2im(dcols, x.shape, kh, kw, stride, padding)
    return dx, dw.reshape(w.shape).astype(w.dtype)
