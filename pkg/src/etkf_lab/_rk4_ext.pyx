# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled RK4 kernels, same contract as ``_rk4_py``.

Members are integrated independently with the GIL released; a member whose
state turns non-finite stops early.
"""

import numpy as np
from libc.math cimport isfinite


cdef inline bint _row_finite(double[::1] x, Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(m):
        if not isfinite(x[i]):
            return False
    return True


cdef inline void _l63(double[::1] x, double[::1] out, double s, double r, double b) noexcept nogil:
    out[0] = s * (x[1] - x[0])
    out[1] = x[0] * (r - x[2]) - x[1]
    out[2] = x[0] * x[1] - b * x[2]


cdef inline void _l96(double[::1] x, double[::1] out, Py_ssize_t m, double F) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(m):
        out[i] = (x[(i + 1) % m] - x[(i + m - 2) % m]) * x[(i + m - 1) % m] - x[i] + F


cdef inline void _lin(double[::1] x, double[::1] out, Py_ssize_t m, const double[:, ::1] A) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(m):
        acc = 0.0
        for j in range(m):
            acc += A[i, j] * x[j]
        out[i] = acc


cdef int _integrate(double[:, ::1] X, int kind, double p0, double p1, double p2,
                    const double[:, ::1] A, double dt, long nsteps, double[:, ::1] work) noexcept nogil:
    cdef Py_ssize_t N = X.shape[0], m = X.shape[1]
    cdef Py_ssize_t n, i
    cdef long step
    cdef double half = 0.5 * dt, sixth = dt / 6.0
    cdef double[::1] x, k1 = work[0], k2 = work[1], k3 = work[2], k4 = work[3], tmp = work[4]
    cdef int first_bad = -1
    for n in range(N):
        x = X[n]
        for step in range(nsteps):
            _rhs(kind, x, k1, m, p0, p1, p2, A)
            for i in range(m):
                tmp[i] = x[i] + half * k1[i]
            _rhs(kind, tmp, k2, m, p0, p1, p2, A)
            for i in range(m):
                tmp[i] = x[i] + half * k2[i]
            _rhs(kind, tmp, k3, m, p0, p1, p2, A)
            for i in range(m):
                tmp[i] = x[i] + dt * k3[i]
            _rhs(kind, tmp, k4, m, p0, p1, p2, A)
            for i in range(m):
                x[i] = x[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not _row_finite(x, m):
                break
        if first_bad < 0 and not _row_finite(x, m):
            first_bad = <int>n
    return first_bad


cdef inline void _rhs(int kind, double[::1] x, double[::1] out, Py_ssize_t m,
                      double p0, double p1, double p2, const double[:, ::1] A) noexcept nogil:
    if kind == 0:
        _l63(x, out, p0, p1, p2)
    elif kind == 1:
        _l96(x, out, m, p0)
    else:
        _lin(x, out, m, A)


_EMPTY = np.zeros((1, 1))


def _run(X, int kind, double p0, double p1, double p2, A, double dt, long nsteps):
    cdef double[:, ::1] Xv = X
    cdef const double[:, ::1] Av = A
    cdef double[:, ::1] work = np.empty((5, X.shape[1]))
    cdef int bad
    with nogil:
        bad = _integrate(Xv, kind, p0, p1, p2, Av, dt, nsteps, work)
    return bad


def rk4_lorenz63(X, double sigma, double rho, double beta, double dt, long nsteps):
    return _run(X, 0, sigma, rho, beta, _EMPTY, dt, nsteps)


def rk4_lorenz96(X, double forcing, double dt, long nsteps):
    return _run(X, 1, forcing, 0.0, 0.0, _EMPTY, dt, nsteps)


def rk4_linear(X, A, double dt, long nsteps):
    return _run(X, 2, 0.0, 0.0, 0.0, np.ascontiguousarray(A, dtype=np.float64), dt, nsteps)
