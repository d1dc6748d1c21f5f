# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels; see _core_py.py for the reference implementation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef int _chol_solve(double[:, ::1] A, double[::1] b, double[::1] out) nogil:
    # in-place Cholesky of the p x p matrix A, then two triangular solves
    cdef Py_ssize_t p = A.shape[0], i, j, k
    cdef double s
    for j in range(p):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if s <= 0.0:
            return -1
        A[j, j] = sqrt(s)
        for i in range(j + 1, p):
            s = A[i, j]
            for k in range(j):
                s -= A[i, k] * A[j, k]
            A[i, j] = s / A[j, j]
    for i in range(p):
        s = b[i]
        for k in range(i):
            s -= A[i, k] * out[k]
        out[i] = s / A[i, i]
    for i in range(p - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, p):
            s -= A[k, i] * out[k]
        out[i] = s / A[i, i]
    return 0


def wls(const double[:, ::1] X, const double[::1] z, const double[::1] w):
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], i, a, c
    cdef double[:, ::1] A = np.zeros((p, p))
    cdef double[::1] b = np.zeros(p)
    beta = np.empty(p)
    cdef double[::1] bv = beta
    cdef double wi
    with nogil:
        for i in range(n):
            wi = w[i]
            for a in range(p):
                b[a] += wi * X[i, a] * z[i]
                for c in range(a + 1):
                    A[a, c] += wi * X[i, a] * X[i, c]
        for a in range(p):
            for c in range(a + 1, p):
                A[a, c] = A[c, a]
        if _chol_solve(A, b, bv) != 0:
            with gil:
                raise np.linalg.LinAlgError("matrix is not positive definite")
    return beta


def pwls_re(const double[:, ::1] X, const double[::1] z, const double[::1] w,
            const cnp.intp_t[::1] area, Py_ssize_t J, double lam):
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], i, j, a, c
    cdef double[:, ::1] A = np.zeros((p, p))
    cdef double[::1] b = np.zeros(p)
    cdef double[:, ::1] Sx = np.zeros((J, p))
    cdef double[::1] Sz = np.zeros(J)
    cdef double[::1] W = np.zeros(J)
    beta = np.empty(p)
    gamma = np.empty(J)
    cdef double[::1] bv = beta
    cdef double[::1] gv = gamma
    cdef double wi, wx, d, nu = 0.0, s
    with nogil:
        for i in range(n):
            wi = w[i]
            j = area[i]
            W[j] += wi
            Sz[j] += wi * z[i]
            for a in range(p):
                wx = wi * X[i, a]
                Sx[j, a] += wx
                b[a] += wx * z[i]
                for c in range(a + 1):
                    A[a, c] += wx * X[i, c]
        for j in range(J):
            d = W[j] + lam
            nu += W[j] / d
            for a in range(p):
                b[a] -= Sx[j, a] * Sz[j] / d
                for c in range(a + 1):
                    A[a, c] -= Sx[j, a] * Sx[j, c] / d
        for a in range(p):
            for c in range(a + 1, p):
                A[a, c] = A[c, a]
        if _chol_solve(A, b, bv) != 0:
            with gil:
                raise np.linalg.LinAlgError("matrix is not positive definite")
        for j in range(J):
            s = Sz[j]
            for a in range(p):
                s -= Sx[j, a] * bv[a]
            gv[j] = s / (W[j] + lam)
    return beta, gamma, nu


def group_sum(const double[::1] values, const cnp.intp_t[::1] area, Py_ssize_t J):
    out = np.zeros(J)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(values.shape[0]):
            o[area[i]] += values[i]
    return out
