# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels (single-threaded, deterministic).

The 3x3 stride-1 path is specialized: the kernel taps are unrolled so the
inner loops stream along output rows.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline object _np_dtype(real v):
    if real is float:
        return np.float32
    return np.float64


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] b,
                   int stride, int padding):
    cdef Py_ssize_t n = x.shape[0], ic = x.shape[1], ih = x.shape[2], iw = x.shape[3]
    cdef Py_ssize_t oc = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ph = ih + 2 * padding, pw = iw + 2 * padding
    cdef Py_ssize_t oh = (ph - kh) // stride + 1, ow = (pw - kw) // stride + 1

    dtype = np.float32 if real is float else np.float64
    xp_arr = np.zeros((n, ic, ph, pw), dtype=dtype)
    xp_arr[:, :, padding:padding + ih, padding:padding + iw] = np.asarray(x)
    cdef real[:, :, :, ::1] xp = xp_arr
    y_arr = np.empty((n, oc, oh, ow), dtype=dtype)
    cdef real[:, :, :, ::1] y = y_arr

    cdef Py_ssize_t u, o, c, i, j, p, q
    cdef real w0, w1, w2, wv, acc
    with nogil:
        for u in range(n):
            for o in range(oc):
                for p in range(oh):
                    for q in range(ow):
                        y[u, o, p, q] = b[o]
                if kh == 3 and kw == 3 and stride == 1:
                    for c in range(ic):
                        for i in range(3):
                            w0 = w[o, c, i, 0]
                            w1 = w[o, c, i, 1]
                            w2 = w[o, c, i, 2]
                            for p in range(oh):
                                for q in range(ow):
                                    y[u, o, p, q] = y[u, o, p, q] + (
                                        w0 * xp[u, c, p + i, q]
                                        + w1 * xp[u, c, p + i, q + 1]
                                        + w2 * xp[u, c, p + i, q + 2])
                else:
                    for c in range(ic):
                        for i in range(kh):
                            for j in range(kw):
                                wv = w[o, c, i, j]
                                for p in range(oh):
                                    for q in range(ow):
                                        y[u, o, p, q] = y[u, o, p, q] + \
                                            wv * xp[u, c, p * stride + i, q * stride + j]
    return y_arr


def conv2d_backward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[:, :, :, ::1] gy,
                    int stride, int padding, bint need_gx, bint need_gw):
    cdef Py_ssize_t n = x.shape[0], ic = x.shape[1], ih = x.shape[2], iw = x.shape[3]
    cdef Py_ssize_t oc = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t ph = ih + 2 * padding, pw = iw + 2 * padding

    dtype = np.float32 if real is float else np.float64
    gb_arr = np.asarray(gy).sum(axis=(0, 2, 3))
    gx_arr = gw_arr = None

    cdef real[:, :, :, ::1] xp
    cdef real[:, :, :, ::1] gxp
    cdef real[:, :, :, ::1] gw
    cdef Py_ssize_t u, o, c, i, j, p, q
    cdef real w0, w1, w2, wv, g, a0, a1, a2

    if need_gw:
        xp_arr = np.zeros((n, ic, ph, pw), dtype=dtype)
        xp_arr[:, :, padding:padding + ih, padding:padding + iw] = np.asarray(x)
        xp = xp_arr
        gw_arr = np.zeros((oc, ic, kh, kw), dtype=dtype)
        gw = gw_arr
        with nogil:
            for u in range(n):
                for o in range(oc):
                    if kh == 3 and kw == 3 and stride == 1:
                        for c in range(ic):
                            for i in range(3):
                                a0 = 0
                                a1 = 0
                                a2 = 0
                                for p in range(oh):
                                    for q in range(ow):
                                        g = gy[u, o, p, q]
                                        a0 = a0 + g * xp[u, c, p + i, q]
                                        a1 = a1 + g * xp[u, c, p + i, q + 1]
                                        a2 = a2 + g * xp[u, c, p + i, q + 2]
                                gw[o, c, i, 0] = gw[o, c, i, 0] + a0
                                gw[o, c, i, 1] = gw[o, c, i, 1] + a1
                                gw[o, c, i, 2] = gw[o, c, i, 2] + a2
                    else:
                        for c in range(ic):
                            for i in range(kh):
                                for j in range(kw):
                                    a0 = 0
                                    for p in range(oh):
                                        for q in range(ow):
                                            a0 = a0 + gy[u, o, p, q] * \
                                                xp[u, c, p * stride + i, q * stride + j]
                                    gw[o, c, i, j] = gw[o, c, i, j] + a0
    if need_gx:
        gxp_arr = np.zeros((n, ic, ph, pw), dtype=dtype)
        gxp = gxp_arr
        with nogil:
            for u in range(n):
                for o in range(oc):
                    if kh == 3 and kw == 3 and stride == 1:
                        for c in range(ic):
                            for i in range(3):
                                w0 = w[o, c, i, 0]
                                w1 = w[o, c, i, 1]
                                w2 = w[o, c, i, 2]
                                for p in range(oh):
                                    for q in range(ow):
                                        g = gy[u, o, p, q]
                                        gxp[u, c, p + i, q] = gxp[u, c, p + i, q] + w0 * g
                                        gxp[u, c, p + i, q + 1] = gxp[u, c, p + i, q + 1] + w1 * g
                                        gxp[u, c, p + i, q + 2] = gxp[u, c, p + i, q + 2] + w2 * g
                    else:
                        for c in range(ic):
                            for i in range(kh):
                                for j in range(kw):
                                    wv = w[o, c, i, j]
                                    for p in range(oh):
                                        for q in range(ow):
                                            gxp[u, c, p * stride + i, q * stride + j] = \
                                                gxp[u, c, p * stride + i, q * stride + j] + \
                                                wv * gy[u, o, p, q]
        if padding:
            gx_arr = np.ascontiguousarray(gxp_arr[:, :, padding:-padding, padding:-padding])
        else:
            gx_arr = gxp_arr
    return gx_arr, gw_arr, gb_arr


def maxpool2d_forward(real[:, :, :, ::1] x, int size, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], ih = x.shape[2], iw = x.shape[3]
    cdef Py_ssize_t oh = (ih - size) // stride + 1, ow = (iw - size) // stride + 1

    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((n, c, oh, ow), dtype=dtype)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef real[:, :, :, ::1] y = y_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr

    cdef Py_ssize_t u, k, p, q, i, j, best_ij
    cdef real best, v
    with nogil:
        for u in range(n):
            for k in range(c):
                for p in range(oh):
                    for q in range(ow):
                        best = x[u, k, p * stride, q * stride]
                        best_ij = 0
                        for i in range(size):
                            for j in range(size):
                                v = x[u, k, p * stride + i, q * stride + j]
                                if v > best:
                                    best = v
                                    best_ij = i * size + j
                        y[u, k, p, q] = best
                        arg[u, k, p, q] = best_ij
    return y_arr, arg_arr


def maxpool2d_backward(cnp.int64_t[:, :, :, ::1] arg, real[:, :, :, ::1] gy,
                       Py_ssize_t ih, Py_ssize_t iw, int size, int stride):
    cdef Py_ssize_t n = gy.shape[0], c = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]

    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((n, c, ih, iw), dtype=dtype)
    cdef real[:, :, :, ::1] gx = gx_arr

    cdef Py_ssize_t u, k, p, q, ij
    with nogil:
        for u in range(n):
            for k in range(c):
                for p in range(oh):
                    for q in range(ow):
                        ij = arg[u, k, p, q]
                        gx[u, k, p * stride + ij // size, q * stride + ij % size] += gy[u, k, p, q]
    return gx_arr
