# cython: language_level=3
"""Compiled policy math kernels (hot path of sampling, SFT, and GRPO steps).

Mirrors kernels.pyref; the loop orders differ from BLAS so results agree
with the reference only to float64 round-off, not bit-for-bit.
"""

from libc.math cimport tanh, exp, log

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


def batch_forward(object w_in, object b_in, object w_coord, object b_coord,
                  object w_fmt, object b_fmt, object X):
    cdef double[:, ::1] w_in_v = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef double[::1] b_in_v = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef double[:, :, ::1] w_c_v = np.ascontiguousarray(w_coord, dtype=np.float64)
    cdef double[:, ::1] b_c_v = np.ascontiguousarray(b_coord, dtype=np.float64)
    cdef double[:, ::1] w_f_v = np.ascontiguousarray(w_fmt, dtype=np.float64)
    cdef double[::1] b_f_v = np.ascontiguousarray(b_fmt, dtype=np.float64)
    cdef double[:, ::1] x_v = np.ascontiguousarray(X, dtype=np.float64)

    cdef Py_ssize_t B = x_v.shape[0]
    cdef Py_ssize_t D = x_v.shape[1]
    cdef Py_ssize_t H = w_in_v.shape[1]
    cdef Py_ssize_t G = w_c_v.shape[2]

    hidden_arr = np.empty((B, H), dtype=np.float64)
    logp_c_arr = np.empty((B, 4, G), dtype=np.float64)
    logp_f_arr = np.empty((B, 2), dtype=np.float64)
    cdef double[:, ::1] hidden = hidden_arr
    cdef double[:, :, ::1] logp_c = logp_c_arr
    cdef double[:, ::1] logp_f = logp_f_arr

    cdef Py_ssize_t b, d, h, k, g
    cdef double acc, m, lse

    for b in range(B):
        for h in range(H):
            acc = b_in_v[h]
            for d in range(D):
                acc += x_v[b, d] * w_in_v[d, h]
            hidden[b, h] = tanh(acc)

        for k in range(4):
            for g in range(G):
                acc = b_c_v[k, g]
                for h in range(H):
                    acc += hidden[b, h] * w_c_v[k, h, g]
                logp_c[b, k, g] = acc
            m = logp_c[b, k, 0]
            for g in range(1, G):
                if logp_c[b, k, g] > m:
                    m = logp_c[b, k, g]
            lse = 0.0
            for g in range(G):
                lse += exp(logp_c[b, k, g] - m)
            lse = m + log(lse)
            for g in range(G):
                logp_c[b, k, g] -= lse

        for g in range(2):
            acc = b_f_v[g]
            for h in range(H):
                acc += hidden[b, h] * w_f_v[h, g]
            logp_f[b, g] = acc
        m = logp_f[b, 0] if logp_f[b, 0] > logp_f[b, 1] else logp_f[b, 1]
        lse = m + log(exp(logp_f[b, 0] - m) + exp(logp_f[b, 1] - m))
        logp_f[b, 0] -= lse
        logp_f[b, 1] -= lse

    return hidden_arr, logp_c_arr, logp_f_arr


def backward(object w_coord, object w_fmt, object X, object hidden,
             object dl_coord, object dl_fmt):
    cdef double[:, :, ::1] w_c_v = np.ascontiguousarray(w_coord, dtype=np.float64)
    cdef double[:, ::1] w_f_v = np.ascontiguousarray(w_fmt, dtype=np.float64)
    cdef double[:, ::1] x_v = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] h_v = np.ascontiguousarray(hidden, dtype=np.float64)
    cdef double[:, :, ::1] dl_c_v = np.ascontiguousarray(dl_coord, dtype=np.float64)
    cdef double[:, ::1] dl_f_v = np.ascontiguousarray(dl_fmt, dtype=np.float64)

    cdef Py_ssize_t B = x_v.shape[0]
    cdef Py_ssize_t D = x_v.shape[1]
    cdef Py_ssize_t H = h_v.shape[1]
    cdef Py_ssize_t G = w_c_v.shape[2]

    g_w_in_arr = np.zeros((D, H), dtype=np.float64)
    g_b_in_arr = np.zeros(H, dtype=np.float64)
    g_w_c_arr = np.zeros((4, H, G), dtype=np.float64)
    g_b_c_arr = np.zeros((4, G), dtype=np.float64)
    g_w_f_arr = np.zeros((H, 2), dtype=np.float64)
    g_b_f_arr = np.zeros(2, dtype=np.float64)
    cdef double[:, ::1] g_w_in = g_w_in_arr
    cdef double[::1] g_b_in = g_b_in_arr
    cdef double[:, :, ::1] g_w_c = g_w_c_arr
    cdef double[:, ::1] g_b_c = g_b_c_arr
    cdef double[:, ::1] g_w_f = g_w_f_arr
    cdef double[::1] g_b_f = g_b_f_arr

    dpre_arr = np.empty(H, dtype=np.float64)
    cdef double[::1] dpre = dpre_arr

    cdef Py_ssize_t b, d, h, k, g
    cdef double acc, hv

    for b in range(B):
        for h in range(H):
            hv = h_v[b, h]
            for k in range(4):
                for g in range(G):
                    g_w_c[k, h, g] += hv * dl_c_v[b, k, g]
            g_w_f[h, 0] += hv * dl_f_v[b, 0]
            g_w_f[h, 1] += hv * dl_f_v[b, 1]

            acc = 0.0
            for k in range(4):
                for g in range(G):
                    acc += w_c_v[k, h, g] * dl_c_v[b, k, g]
            acc += w_f_v[h, 0] * dl_f_v[b, 0] + w_f_v[h, 1] * dl_f_v[b, 1]
            dpre[h] = acc * (1.0 - hv * hv)

        for k in range(4):
            for g in range(G):
                g_b_c[k, g] += dl_c_v[b, k, g]
        g_b_f[0] += dl_f_v[b, 0]
        g_b_f[1] += dl_f_v[b, 1]

        for d in range(D):
            for h in range(H):
                g_w_in[d, h] += x_v[b, d] * dpre[h]
        for h in range(H):
            g_b_in[h] += dpre[h]

    return g_w_in_arr, g_b_in_arr, g_w_c_arr, g_b_c_arr, g_w_f_arr, g_b_f_arr
