# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment/scatter kernels for the training hot path."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(double[:, ::1] out, long long[::1] idx, double[:, ::1] src):
    """out[idx[e], :] += src[e, :] for every row e."""
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_rows = src.shape[0]
    cdef Py_ssize_t n_cols = src.shape[1]
    cdef long long t
    for e in range(n_rows):
        t = idx[e]
        for j in range(n_cols):
            out[t, j] += src[e, j]


def segment_max_rows(double[:, ::1] out, long long[::1] seg, double[:, ::1] src):
    """out[seg[e], :] = max(out[seg[e], :], src[e, :]); out must be pre-filled."""
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_rows = src.shape[0]
    cdef Py_ssize_t n_cols = src.shape[1]
    cdef long long t
    for e in range(n_rows):
        t = seg[e]
        for j in range(n_cols):
            if src[e, j] > out[t, j]:
                out[t, j] = src[e, j]


def gather_rows_add(double[:, ::1] out, long long[::1] idx, double[:, ::1] src):
    """out[e, :] += src[idx[e], :] for every row e (backward of scatter)."""
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_rows = out.shape[0]
    cdef Py_ssize_t n_cols = out.shape[1]
    cdef long long s
    for e in range(n_rows):
        s = idx[e]
        for j in range(n_cols):
            out[e, j] += src[s, j]


def gather2_add(
    double[:, ::1] out,
    double[:, ::1] a,
    double[:, ::1] b,
    double[:, ::1] c,
    long long[::1] ia,
    long long[::1] ib,
):
    """out[e, :] = a[ia[e], :] + b[ib[e], :] + c[e, :] in one pass."""
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_rows = out.shape[0]
    cdef Py_ssize_t n_cols = out.shape[1]
    cdef long long sa, sb
    for e in range(n_rows):
        sa = ia[e]
        sb = ib[e]
        for j in range(n_cols):
            out[e, j] = a[sa, j] + b[sb, j] + c[e, j]


def scatter2_add_rows(
    double[:, ::1] ga,
    double[:, ::1] gb,
    long long[::1] ia,
    long long[::1] ib,
    double[:, ::1] g,
):
    """ga[ia[e], :] += g[e, :] and gb[ib[e], :] += g[e, :] in one pass."""
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_rows = g.shape[0]
    cdef Py_ssize_t n_cols = g.shape[1]
    cdef long long ta, tb
    for e in range(n_rows):
        ta = ia[e]
        tb = ib[e]
        for j in range(n_cols):
            ga[ta, j] += g[e, j]
            gb[tb, j] += g[e, j]


def weighted_gather_scatter(
    double[:, ::1] out,
    double[:, ::1] alpha,
    double[:, ::1] values,
    long long[::1] src,
    long long[::1] dst,
):
    """out[dst[e], :] += alpha[e, 0] * values[src[e], :] without (E, d) temps."""
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_rows = src.shape[0]
    cdef Py_ssize_t n_cols = out.shape[1]
    cdef long long s, t
    cdef double w
    for e in range(n_rows):
        s = src[e]
        t = dst[e]
        w = alpha[e, 0]
        for j in range(n_cols):
            out[t, j] += w * values[s, j]


def weighted_gather_scatter_bwd(
    double[:, ::1] galpha,
    double[:, ::1] gvalues,
    double[:, ::1] alpha,
    double[:, ::1] values,
    long long[::1] src,
    long long[::1] dst,
    double[:, ::1] g,
):
    """Adjoint of weighted_gather_scatter: fills galpha (E, 1) and adds into gvalues."""
    cdef Py_ssize_t e, j
    cdef Py_ssize_t n_rows = src.shape[0]
    cdef Py_ssize_t n_cols = g.shape[1]
    cdef long long s, t
    cdef double w, acc
    for e in range(n_rows):
        s = src[e]
        t = dst[e]
        w = alpha[e, 0]
        acc = 0.0
        for j in range(n_cols):
            acc += values[s, j] * g[t, j]
            gvalues[s, j] += w * g[t, j]
        galpha[e, 0] = acc


def leaky_forward(double[:, ::1] out, double[:, ::1] x, double slope):
    """out = x where positive else slope * x."""
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef double v
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            out[i, j] = v if v > 0.0 else slope * v


def leaky_backward(double[:, ::1] gx, double[:, ::1] x, double[:, ::1] g, double slope):
    """gx = g where x positive else slope * g."""
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    for i in range(n):
        for j in range(d):
            gx[i, j] = g[i, j] if x[i, j] > 0.0 else slope * g[i, j]
