# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled gather/scatter kernels for convolution via matrix multiply.

Same layout and accumulation-order contract as the pure-numpy reference
(`voicemorph.kernels._reference`); results are bit-identical.
"""

import numpy as np


def im2col(x, int kh, int kw, int sh, int sw, int ph, int pw):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1]
    cdef Py_ssize_t h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t ho = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t wo = (w + 2 * pw - kw) // sw + 1
    out = np.empty((c * kh * kw, n * ho * wo), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t ci, ki, kj, ni, oh, ow, row, base, hi, wi
    with nogil:
        for ci in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ci * kh + ki) * kw + kj
                    for ni in range(n):
                        for oh in range(ho):
                            hi = oh * sh + ki - ph
                            base = (ni * ho + oh) * wo
                            if hi < 0 or hi >= h:
                                for ow in range(wo):
                                    ov[row, base + ow] = 0.0
                            else:
                                for ow in range(wo):
                                    wi = ow * sw + kj - pw
                                    if 0 <= wi < w:
                                        ov[row, base + ow] = xv[ni, ci, hi, wi]
                                    else:
                                        ov[row, base + ow] = 0.0
    return out


def col2im(cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w,
           int kh, int kw, int sh, int sw, int ph, int pw):
    cdef double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64)
    cdef Py_ssize_t ho = (h + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t ki, kj, ci, ni, oh, ow, row, base, hi, wi
    # (ki, kj) stays outermost so per-element accumulation order matches
    # the reference backend exactly.
    with nogil:
        for ki in range(kh):
            for kj in range(kw):
                for ci in range(c):
                    row = (ci * kh + ki) * kw + kj
                    for ni in range(n):
                        for oh in range(ho):
                            hi = oh * sh + ki - ph
                            if hi < 0 or hi >= h:
                                continue
                            base = (ni * ho + oh) * wo
                            for ow in range(wo):
                                wi = ow * sw + kj - pw
                                if 0 <= wi < w:
                                    ov[ni, ci, hi, wi] += cv[row, base + ow]
    return out
