# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the conv / relu-maxpool kernels.

Same signatures and tie-breaking as ``_pykernels``; summation order differs,
so results agree to rounding, not bit-for-bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    # four partial sums break the add dependency chain
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= n:
        s0 += a[i] * b[i]
        s1 += a[i + 1] * b[i + 1]
        s2 += a[i + 2] * b[i + 2]
        s3 += a[i + 3] * b[i + 3]
        i += 4
    while i < n:
        s0 += a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


cdef inline void _axpy(double g, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        y[i] += g * x[i]


def conv_forward(const double[:, :, ::1] x, const double[:, :, ::1] w, const double[::1] b):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t F = w.shape[0], k = w.shape[1]
    cdef Py_ssize_t L = T - k + 1, kd = k * d
    out_arr = np.empty((B, L, F))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, l, f
    cdef const double* xs
    if B == 0 or L <= 0 or F == 0:
        return out_arr
    with nogil:
        for n in range(B):
            for l in range(L):
                # rows l..l+k-1 of one window are contiguous
                xs = &x[n, l, 0]
                for f in range(F):
                    out[n, l, f] = b[f] + _dot(xs, &w[f, 0, 0], kd)
    return out_arr


def conv_backward(const double[:, :, ::1] x, const double[:, :, ::1] w, const double[:, :, ::1] gout):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], d = x.shape[2]
    cdef Py_ssize_t F = w.shape[0], k = w.shape[1]
    cdef Py_ssize_t L = gout.shape[1], kd = k * d
    dx_arr = np.zeros((B, T, d))
    dw_arr = np.zeros((F, k, d))
    db_arr = np.zeros(F)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t n, l, f
    cdef double g
    if B == 0 or L <= 0 or F == 0:
        return dx_arr, dw_arr, db_arr
    with nogil:
        for n in range(B):
            for l in range(L):
                for f in range(F):
                    g = gout[n, l, f]
                    if g == 0.0:
                        continue
                    db[f] += g
                    _axpy(g, &x[n, l, 0], &dw[f, 0, 0], kd)
                    _axpy(g, &w[f, 0, 0], &dx[n, l, 0], kd)
    return dx_arr, dw_arr, db_arr


def relu_maxpool_forward(const double[:, :, ::1] m, Py_ssize_t pool):
    cdef Py_ssize_t B = m.shape[0], L = m.shape[1], F = m.shape[2]
    cdef Py_ssize_t P = L // pool
    out_arr = np.empty((B, P, F))
    arg_arr = np.empty((B, P, F), dtype=np.intp)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t[:, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, p, f, r, best_r
    cdef double best, v
    with nogil:
        for n in range(B):
            for p in range(P):
                for f in range(F):
                    best_r = p * pool
                    best = m[n, best_r, f]
                    for r in range(p * pool + 1, (p + 1) * pool):
                        v = m[n, r, f]
                        # first NaN wins, as with numpy argmax
                        if v > best or (v != v and best == best):
                            best = v
                            best_r = r
                    out[n, p, f] = best if (best > 0.0 or best != best) else 0.0
                    arg[n, p, f] = best_r
    return out_arr, arg_arr


def relu_maxpool_backward(const double[:, :, ::1] gout, const double[:, :, ::1] out,
                          const Py_ssize_t[:, :, ::1] arg, Py_ssize_t rows):
    cdef Py_ssize_t B = gout.shape[0], P = gout.shape[1], F = gout.shape[2]
    gm_arr = np.zeros((B, rows, F))
    cdef double[:, :, ::1] gm = gm_arr
    cdef Py_ssize_t n, p, f
    with nogil:
        for n in range(B):
            for p in range(P):
                for f in range(F):
                    if out[n, p, f] > 0.0:
                        gm[n, arg[n, p, f], f] = gout[n, p, f]
    return gm_arr
