# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot inner loops.

Tensors here are tiny (S^3 entries with S around 4), so per-call numpy
dispatch overhead dominates; plain typed loops win by a wide margin.
"""

import numpy as np

BACKEND = "cython"


def outer3_i64(u, v, w):
    cdef long long[::1] uu = np.ascontiguousarray(u, dtype=np.int64)
    cdef long long[::1] vv = np.ascontiguousarray(v, dtype=np.int64)
    cdef long long[::1] ww = np.ascontiguousarray(w, dtype=np.int64)
    cdef Py_ssize_t a, b, c
    cdef Py_ssize_t na = uu.shape[0], nb = vv.shape[0], nc = ww.shape[0]
    out_arr = np.empty((na, nb, nc), dtype=np.int64)
    cdef long long[:, :, ::1] out = out_arr
    cdef long long ua, uv
    for a in range(na):
        ua = uu[a]
        for b in range(nb):
            uv = ua * vv[b]
            for c in range(nc):
                out[a, b, c] = uv * ww[c]
    return out_arr


def sub_outer3(T, u, v, w):
    cdef long long[:, :, ::1] t = np.ascontiguousarray(T, dtype=np.int64)
    cdef long long[::1] uu = np.ascontiguousarray(u, dtype=np.int64)
    cdef long long[::1] vv = np.ascontiguousarray(v, dtype=np.int64)
    cdef long long[::1] ww = np.ascontiguousarray(w, dtype=np.int64)
    cdef Py_ssize_t a, b, c
    cdef Py_ssize_t na = uu.shape[0], nb = vv.shape[0], nc = ww.shape[0]
    out_arr = np.empty((na, nb, nc), dtype=np.int64)
    cdef long long[:, :, ::1] out = out_arr
    cdef long long ua, uv, val, m = 0
    for a in range(na):
        ua = uu[a]
        for b in range(nb):
            uv = ua * vv[b]
            for c in range(nc):
                val = t[a, b, c] - uv * ww[c]
                out[a, b, c] = val
                if val < 0:
                    val = -val
                if val > m:
                    m = val
    return out_arr, m


def add_outer3_inplace(acc, u, v, w, coef=1):
    cdef long long[:, :, ::1] t = acc
    cdef long long[::1] uu = np.ascontiguousarray(u, dtype=np.int64)
    cdef long long[::1] vv = np.ascontiguousarray(v, dtype=np.int64)
    cdef long long[::1] ww = np.ascontiguousarray(w, dtype=np.int64)
    cdef long long k = coef
    cdef Py_ssize_t a, b, c
    cdef long long ua, uv
    for a in range(uu.shape[0]):
        ua = k * uu[a]
        for b in range(vv.shape[0]):
            uv = ua * vv[b]
            for c in range(ww.shape[0]):
                t[a, b, c] += uv * ww[c]


def max_abs(T):
    cdef long long[:, :, ::1] t = np.ascontiguousarray(T, dtype=np.int64)
    cdef Py_ssize_t a, b, c
    cdef long long val, m = 0
    for a in range(t.shape[0]):
        for b in range(t.shape[1]):
            for c in range(t.shape[2]):
                val = t[a, b, c]
                if val < 0:
                    val = -val
                if val > m:
                    m = val
    return m


def all_zero(T):
    cdef long long[:, :, ::1] t = np.ascontiguousarray(T, dtype=np.int64)
    cdef Py_ssize_t a, b, c
    for a in range(t.shape[0]):
        for b in range(t.shape[1]):
            for c in range(t.shape[2]):
                if t[a, b, c] != 0:
                    return False
    return True
