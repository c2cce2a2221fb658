# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: matmul and conv2d forward/backward.

Same contract as pykernels: float32 in/out, float64 accumulation inside the
inner loops.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def matmul(float[:, ::1] a, float[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], m = b.shape[1]
    out = np.empty((n, m), dtype=np.float32)
    cdef float[:, ::1] y = out
    cdef Py_ssize_t i, j, p
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for p in range(k):
                    acc += <double> a[i, p] * <double> b[p, j]
                y[i, j] = <float> acc
    return out


def conv2d_fwd(float[:, :, :, ::1] x, float[:, :, :, ::1] w, int stride,
               int pt, int pb, int pl, int pr):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + pt + pb - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + pl + pr - kw) // stride + 1
    out = np.empty((n, o, ho, wo), dtype=np.float32)
    cdef float[:, :, :, ::1] y = out
    cdef Py_ssize_t ni, oi, ci, i, j, u, v, a, b
    cdef double acc
    with nogil:
        for ni in range(n):
            for oi in range(o):
                for i in range(ho):
                    for j in range(wo):
                        acc = 0.0
                        for ci in range(c):
                            for u in range(kh):
                                a = i * stride + u - pt
                                if a < 0 or a >= h:
                                    continue
                                for v in range(kw):
                                    b = j * stride + v - pl
                                    if b < 0 or b >= wd:
                                        continue
                                    acc += <double> x[ni, ci, a, b] * <double> w[oi, ci, u, v]
                        y[ni, oi, i, j] = <float> acc
    return out


def conv2d_bwd_input(float[:, :, :, ::1] gy, float[:, :, :, ::1] w, int stride,
                     int pt, int pb, int pl, int pr, int h, int wdt):
    cdef Py_ssize_t n = gy.shape[0], o = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    acc64 = np.zeros((n, c, h, wdt), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = acc64
    cdef Py_ssize_t ni, oi, ci, i, j, u, v, a, b
    cdef double g
    with nogil:
        for ni in range(n):
            for oi in range(o):
                for i in range(ho):
                    for j in range(wo):
                        g = <double> gy[ni, oi, i, j]
                        for ci in range(c):
                            for u in range(kh):
                                a = i * stride + u - pt
                                if a < 0 or a >= h:
                                    continue
                                for v in range(kw):
                                    b = j * stride + v - pl
                                    if b < 0 or b >= wdt:
                                        continue
                                    gx[ni, ci, a, b] += g * <double> w[oi, ci, u, v]
    return acc64.astype(np.float32)


def conv2d_bwd_weight(float[:, :, :, ::1] gy, float[:, :, :, ::1] x, int stride,
                      int pt, int pb, int pl, int pr, int kh, int kw):
    cdef Py_ssize_t n = gy.shape[0], o = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    acc64 = np.zeros((o, c, kh, kw), dtype=np.float64)
    cdef double[:, :, :, ::1] gw = acc64
    cdef Py_ssize_t ni, oi, ci, i, j, u, v, a, b
    cdef double g
    with nogil:
        for ni in range(n):
            for oi in range(o):
                for i in range(ho):
                    for j in range(wo):
                        g = <double> gy[ni, oi, i, j]
                        for ci in range(c):
                            for u in range(kh):
                                a = i * stride + u - pt
                                if a < 0 or a >= h:
                                    continue
                                for v in range(kw):
                                    b = j * stride + v - pl
                                    if b < 0 or b >= wd:
                                        continue
                                    gw[oi, ci, u, v] += g * <double> x[ni, ci, a, b]
    return acc64.astype(np.float32)
