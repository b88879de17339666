# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution kernels.

C packing loops (im2col / col2im) around BLAS GEMM contractions, using the
BLAS routines scipy exposes at the C level, so nothing links at build time.
Same contract as kernels.reference: cross-correlation with zero padding.
Accumulation happens inside GEMM in the array's own precision; the batch
loop order is fixed, so results are deterministic for a given input.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm, sgemm


ctypedef fused floating:
    float
    double

BACKEND = "compiled"


cdef inline void _gemm(bint ta, bint tb, int m, int n, int k,
                       floating* a, int lda, floating* b, int ldb,
                       floating beta, floating* c, int ldc) noexcept nogil:
    # column-major GEMM: C[m,n] = op(A)[m,k] op(B)[k,n] + beta C
    cdef char cta = 84 if ta else 78
    cdef char ctb = 84 if tb else 78
    cdef floating alpha = 1.0
    if m == 0 or n == 0:
        return
    if floating is float:
        sgemm(&cta, &ctb, &m, &n, &k, &alpha, a, &lda, b, &ldb,
              &beta, c, &ldc)
    else:
        dgemm(&cta, &ctb, &m, &n, &k, &alpha, a, &lda, b, &ldb,
              &beta, c, &ldc)


cdef inline void _pack_cols(floating[:, :, :, ::1] x, Py_ssize_t ib,
                            floating[:, ::1] cols,
                            Py_ssize_t kh, Py_ssize_t kw,
                            Py_ssize_t stride, Py_ssize_t padding,
                            Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    # cols[(ic*kh + i)*kw + j, y*ow + xx] = padded x[ib, ic, ., .]
    cdef Py_ssize_t cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ic, i, j, y, xx, hi, wi, r
    for ic in range(cin):
        for i in range(kh):
            for j in range(kw):
                r = (ic * kh + i) * kw + j
                for y in range(oh):
                    hi = y * stride + i - padding
                    if hi < 0 or hi >= h:
                        for xx in range(ow):
                            cols[r, y * ow + xx] = 0
                        continue
                    for xx in range(ow):
                        wi = xx * stride + j - padding
                        if 0 <= wi < wd:
                            cols[r, y * ow + xx] = x[ib, ic, hi, wi]
                        else:
                            cols[r, y * ow + xx] = 0


cdef inline void _scatter_cols(floating[:, ::1] dcols,
                               floating[:, :, :, ::1] dx, Py_ssize_t ib,
                               Py_ssize_t kh, Py_ssize_t kw,
                               Py_ssize_t stride, Py_ssize_t padding,
                               Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    # transpose of _pack_cols: overlapping windows accumulate
    cdef Py_ssize_t cin = dx.shape[1], h = dx.shape[2], wd = dx.shape[3]
    cdef Py_ssize_t ic, i, j, y, xx, hi, wi, r
    for ic in range(cin):
        for i in range(kh):
            for j in range(kw):
                r = (ic * kh + i) * kw + j
                for y in range(oh):
                    hi = y * stride + i - padding
                    if hi < 0 or hi >= h:
                        continue
                    for xx in range(ow):
                        wi = xx * stride + j - padding
                        if 0 <= wi < wd:
                            dx[ib, ic, hi, wi] += dcols[r, y * ow + xx]


def conv2d_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                   int stride, int padding):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * padding - kw) // stride + 1
    cdef int K = <int> (x.shape[1] * kh * kw)
    cdef int P = <int> (oh * ow)

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_np = np.zeros((b, cout, oh, ow), dtype=dtype)
    cols_np = np.empty((K, P), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_np
    cdef floating[:, ::1] cols = cols_np

    cdef Py_ssize_t ib
    cdef floating zero = 0.0
    if b == 0 or P == 0 or K == 0 or cout == 0:
        return out_np
    with nogil:
        for ib in range(b):
            _pack_cols(x, ib, cols, kh, kw, stride, padding, oh, ow)
            # out'[P, cout] = cols'[P, K] w'[K, cout]  (primes: column-major)
            _gemm(0, 0, P, <int> cout, K,
                  &cols[0, 0], P, &w[0, 0, 0, 0], K,
                  zero, &out[ib, 0, 0, 0], P)
    return out_np


def conv2d_backward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] w,
                    floating[:, :, :, ::1] dout, int stride, int padding):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = dout.shape[2], ow = dout.shape[3]
    cdef int K = <int> (x.shape[1] * kh * kw)
    cdef int P = <int> (oh * ow)

    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_np = np.zeros((b, x.shape[1], h, wd), dtype=dtype)
    dw_np = np.zeros((cout, x.shape[1], kh, kw), dtype=dtype)
    cols_np = np.empty((K, P), dtype=dtype)
    dcols_np = np.empty((K, P), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_np
    cdef floating[:, :, :, ::1] dw = dw_np
    cdef floating[:, ::1] cols = cols_np
    cdef floating[:, ::1] dcols = dcols_np

    cdef Py_ssize_t ib
    cdef floating zero = 0.0
    cdef floating one = 1.0
    if b == 0 or P == 0 or K == 0 or cout == 0:
        return dx_np, dw_np
    with nogil:
        for ib in range(b):
            # dcols'[P, K] = dout'[P, cout] w'[K, cout]^T
            _gemm(0, 1, P, K, <int> cout,
                  &dout[ib, 0, 0, 0], P, &w[0, 0, 0, 0], K,
                  zero, &dcols[0, 0], P)
            _scatter_cols(dcols, dx, ib, kh, kw, stride, padding, oh, ow)
            # dw'[K, cout] += cols'[P, K]^T dout'[P, cout]
            _pack_cols(x, ib, cols, kh, kw, stride, padding, oh, ow)
            _gemm(1, 0, K, <int> cout, P,
                  &cols[0, 0], P, &dout[ib, 0, 0, 0], P,
                  one, &dw[0, 0, 0, 0], K)
    return dx_np, dw_np
