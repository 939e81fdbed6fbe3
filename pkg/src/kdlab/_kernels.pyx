# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: the hot elementwise/reduction loops.

Signature-identical to kdlab._kernels_np; see that module for the
contract. BLAS-bound matmuls stay in NumPy either way; these kernels
fuse the softmax / layernorm / GELU passes that otherwise dominate the
Python-side op overhead at desk scale.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erfc, exp, log, sqrt

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double INV_SQRT_2PI = 0.3989422804014327
cdef double SQRT1_2 = 0.7071067811865476


cdef inline double _phi_cdf(double x) nogil:
    return 0.5 * erfc(-x * SQRT1_2)


def gelu_fwd(cnp.ndarray[cnp.float64_t, ndim=2] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty_like(x)
    cdef double v
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            y[i, j] = v * _phi_cdf(v)
    return y


def gelu_bwd(cnp.ndarray[cnp.float64_t, ndim=2] x,
             cnp.ndarray[cnp.float64_t, ndim=2] gout):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gin = np.empty_like(x)
    cdef double v
    for i in range(n):
        for j in range(d):
            v = x[i, j]
            gin[i, j] = gout[i, j] * (_phi_cdf(v) + v * exp(-0.5 * v * v) * INV_SQRT_2PI)
    return gin


def softmax_fwd(cnp.ndarray[cnp.float64_t, ndim=2] x, double tau):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty_like(x)
    cdef double mx, s
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, d):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(d):
            y[i, j] = exp((x[i, j] - mx) / tau)
            s += y[i, j]
        for j in range(d):
            y[i, j] /= s
    return y


def softmax_bwd(cnp.ndarray[cnp.float64_t, ndim=2] y,
                cnp.ndarray[cnp.float64_t, ndim=2] gout, double tau):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gin = np.empty_like(y)
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += gout[i, j] * y[i, j]
        for j in range(d):
            gin[i, j] = y[i, j] * (gout[i, j] - dot) / tau
    return gin


def log_softmax_fwd(cnp.ndarray[cnp.float64_t, ndim=2] x, double tau):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty_like(x)
    cdef double mx, s
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, d):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(d):
            y[i, j] = (x[i, j] - mx) / tau
            s += exp(y[i, j])
        s = log(s)
        for j in range(d):
            y[i, j] -= s
    return y


def log_softmax_bwd(cnp.ndarray[cnp.float64_t, ndim=2] logp,
                    cnp.ndarray[cnp.float64_t, ndim=2] gout, double tau):
    cdef Py_ssize_t n = logp.shape[0], d = logp.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gin = np.empty_like(logp)
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += gout[i, j]
        for j in range(d):
            gin[i, j] = (gout[i, j] - exp(logp[i, j]) * s) / tau
    return gin


def layernorm_fwd(cnp.ndarray[cnp.float64_t, ndim=2] x,
                  cnp.ndarray[cnp.float64_t, ndim=1] gain,
                  cnp.ndarray[cnp.float64_t, ndim=1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty_like(x)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rstd = np.empty(n, dtype=np.float64)
    cdef double m, v, c
    for i in range(n):
        m = 0.0
        for j in range(d):
            m += x[i, j]
        m /= d
        v = 0.0
        for j in range(d):
            c = x[i, j] - m
            v += c * c
        v /= d
        mu[i] = m
        rstd[i] = 1.0 / sqrt(v + eps)
        for j in range(d):
            y[i, j] = (x[i, j] - m) * rstd[i] * gain[j] + bias[j]
    return y, mu, rstd


def layernorm_bwd(cnp.ndarray[cnp.float64_t, ndim=2] x,
                  cnp.ndarray[cnp.float64_t, ndim=1] gain,
                  cnp.ndarray[cnp.float64_t, ndim=1] mu,
                  cnp.ndarray[cnp.float64_t, ndim=1] rstd,
                  cnp.ndarray[cnp.float64_t, ndim=2] gout):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gx = np.empty_like(x)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ggain = np.zeros(d, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gbias = np.zeros(d, dtype=np.float64)
    cdef double xhat, gxh, m1, m2
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            gxh = gout[i, j] * gain[j]
            gbias[j] += gout[i, j]
            ggain[j] += gout[i, j] * xhat
            m1 += gxh
            m2 += gxh * xhat
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mu[i]) * rstd[i]
            gxh = gout[i, j] * gain[j]
            gx[i, j] = rstd[i] * (gxh - m1 - xhat * m2)
    return gx, ggain, gbias
