# Compiled twins of the functions in _pykernels.py. Same names, same
# signatures, same cutoff semantics; single fused pass per call.
import numpy as np

from libc.math cimport exp, fabs, log1p

cdef double CUTOFF = 30.0


cdef inline double _softplus(double x, double theta) noexcept nogil:
    cdef double t = theta * x
    if t > CUTOFF:
        return x
    if t < -CUTOFF:
        return 0.0
    return log1p(exp(t)) / theta


cdef inline double _sigmoid(double x, double theta) noexcept nogil:
    cdef double t = theta * x
    cdef double e = exp(-fabs(t))
    if t >= 0:
        return 1.0 / (1.0 + e)
    return e / (1.0 + e)


cdef inline double _sq_factor(double x, double theta) noexcept nogil:
    # 2 * softplus * sigmoid sharing one exp(-|t|)
    cdef double t = theta * x
    cdef double e, sp
    if t > CUTOFF:
        return 2.0 * x
    if t < -CUTOFF:
        return 0.0
    e = exp(-fabs(t))
    if t >= 0:
        sp = (t + log1p(e)) / theta
        return 2.0 * sp / (1.0 + e)
    sp = log1p(e) / theta
    return 2.0 * sp * e / (1.0 + e)


def softplus(const double[:, ::1] x, double theta):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _softplus(x[i, j], theta)
    return out


def sigmoid(const double[:, ::1] x, double theta):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _sigmoid(x[i, j], theta)
    return out


def sq_grad_factor(const double[:, ::1] z, double theta):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _sq_factor(z[i, j], theta)
    return out


def cross_grad_factor(const double[:, ::1] z, const double[:, ::1] b, double theta):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1]
    cdef double bij
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                bij = b[i, j]
                if bij > 0:
                    o[i, j] = 2.0 * bij * _sigmoid(z[i, j], theta)
                else:
                    o[i, j] = 0.0
    return out


def dc_sums(const double[:, ::1] z, const double[:, ::1] b, double theta):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = z.shape[0], m = z.shape[1]
    cdef double sp, bij
    cdef double g_sp = 0.0, g_b = 0.0, h = 0.0
    with nogil:
        for i in range(n):
            for j in range(m):
                sp = _softplus(z[i, j], theta)
                bij = b[i, j]
                g_sp += sp * sp
                g_b += bij * bij
                if bij > 0:
                    h += 2.0 * bij * sp
    return g_sp + g_b, h


cdef inline double _shrink(double v, double tau) noexcept nogil:
    if v > tau:
        return v - tau
    if v < -tau:
        return v + tau
    return 0.0


def soft_threshold(const double[:, ::1] v, double tau, Py_ssize_t n_pen):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = v.shape[0], m = v.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                if i < n_pen:
                    o[i, j] = _shrink(v[i, j], tau)
                else:
                    o[i, j] = v[i, j]
    return out


def prox_momentum_step(const double[:, ::1] y, const double[:, ::1] u,
                       const double[:, ::1] x_prev, double eta, double tau,
                       double beta, Py_ssize_t n_pen):
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1]
    cdef double xv
    x_out = np.empty((n, m), dtype=np.float64)
    y_out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] xo = x_out
    cdef double[:, ::1] yo = y_out
    with nogil:
        for i in range(n):
            for j in range(m):
                xv = y[i, j] - eta * u[i, j]
                if i < n_pen:
                    xv = _shrink(xv, tau)
                xo[i, j] = xv
                yo[i, j] = xv + beta * (xv - x_prev[i, j])
    return x_out, y_out
