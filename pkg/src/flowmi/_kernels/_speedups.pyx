# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernel backend.

Signature-compatible twin of ``numpy_impl``.  Loops run in fixed row-major
order so results are deterministic run to run; no fast-math or
architecture-specific flags are used, so arithmetic stays IEEE-conformant.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, log as c_log, tanh as c_tanh

name = "cython"


# matrix products

def mm_nn(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], m = b.shape[1]
    cdef cnp.ndarray out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, p
    cdef double aip
    for i in range(n):
        for p in range(k):
            aip = a[i, p]
            for j in range(m):
                o[i, j] += aip * b[p, j]
    return out


def mm_nt(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[1], m = b.shape[0]
    cdef cnp.ndarray out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, p
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[j, p]
            o[i, j] = acc
    return out


def mm_tn(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[1], k = a.shape[0], m = b.shape[1]
    cdef cnp.ndarray out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, p
    cdef double api
    for p in range(k):
        for i in range(n):
            api = a[p, i]
            for j in range(m):
                o[i, j] += api * b[p, j]
    return out


def matvec(double[:, ::1] w, double[::1] x):
    cdef Py_ssize_t n = w.shape[0], k = w.shape[1]
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i, p
    cdef double acc
    for i in range(n):
        acc = 0.0
        for p in range(k):
            acc += w[i, p] * x[p]
        o[i] = acc
    return out


def vecmat(double[::1] g, double[:, ::1] w):
    cdef Py_ssize_t n = w.shape[0], k = w.shape[1]
    cdef cnp.ndarray out = np.zeros(k, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i, p
    cdef double gi
    for i in range(n):
        gi = g[i]
        for p in range(k):
            o[p] += gi * w[i, p]
    return out


def outer(double[::1] g, double[::1] x):
    cdef Py_ssize_t n = g.shape[0], k = x.shape[0]
    cdef cnp.ndarray out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, p
    cdef double gi
    for i in range(n):
        gi = g[i]
        for p in range(k):
            o[i, p] = gi * x[p]
    return out


# elementwise forward

def ew_exp(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = c_exp(x[i])
    return out


def ew_log(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = c_log(x[i])
    return out


def ew_tanh(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = c_tanh(x[i])
    return out


def ew_relu(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = x[i] if x[i] > 0.0 else 0.0
    return out


def ew_clip(double[::1] x, double lo, double hi):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double v
    for i in range(n):
        v = x[i]
        if v < lo:
            v = lo
        elif v > hi:
            v = hi
        o[i] = v
    return out


def ew_add(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] + b[i]
    return out


def ew_sub(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] - b[i]
    return out


def ew_mul(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] * b[i]
    return out


def ew_div(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] / b[i]
    return out


def ew_add_s(double[::1] x, double s):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = x[i] + s
    return out


def ew_mul_s(double[::1] x, double s):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = x[i] * s
    return out


# elementwise backward

def ew_exp_grad(double[::1] y, double[::1] g):
    cdef Py_ssize_t n = y.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] * y[i]
    return out


def ew_log_grad(double[::1] x, double[::1] g):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] / x[i]
    return out


def ew_tanh_grad(double[::1] y, double[::1] g):
    cdef Py_ssize_t n = y.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] * (1.0 - y[i] * y[i])
    return out


def ew_relu_grad(double[::1] x, double[::1] g):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] if x[i] > 0.0 else 0.0
    return out


def ew_clip_grad(double[::1] x, double[::1] g, double lo, double hi):
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] if (x[i] >= lo and x[i] <= hi) else 0.0
    return out


# reductions

def reduce_sum(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef double acc = 0.0
    for i in range(n):
        acc += x[i]
    return acc
