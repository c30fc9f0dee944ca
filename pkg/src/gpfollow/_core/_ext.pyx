# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled hot kernels. See ``_fallback.py`` for the reference semantics."""
import numpy as np

from libc.math cimport INFINITY, M_PI, cos, exp, expm1, log, log1p

cdef double _LN2 = 0.6931471805599453
cdef double _TWO_PI = 2.0 * M_PI


cdef inline double _log1mexp(double x) nogil:
    if x > -_LN2:
        return log(-expm1(x))
    return log1p(-exp(x))


cdef inline double _self_cost(double lr, Py_ssize_t d, bint duration) nogil:
    if duration:
        return lr * <double>(d + 1)
    return lr


def kernel_lags(tau, freqs, amps, double sigma_f):
    cdef const double[::1] t = np.ascontiguousarray(tau, dtype=np.float64)
    cdef const double[::1] f = np.ascontiguousarray(freqs, dtype=np.float64)
    cdef const double[::1] a = np.ascontiguousarray(amps, dtype=np.float64)
    cdef Py_ssize_t n = t.shape[0], nf = f.shape[0], i, j
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc, ti, c = -2.0 * M_PI * M_PI * sigma_f * sigma_f
    with nogil:
        for i in range(n):
            ti = t[i]
            acc = 0.0
            for j in range(nf):
                acc = acc + a[j] * cos(_TWO_PI * f[j] * ti)
            o[i] = exp(c * ti * ti) * acc
    return out


cdef void _step(const double[:, :] prev, double[:, :] new, const double[:] e,
                const double[:] lr, bint duration, long long[:] src,
                Py_ssize_t rows, Py_ssize_t width) nogil:
    cdef Py_ssize_t k, d, bd
    cdef double v, best, cand
    for k in range(rows):
        for d in range(width):
            v = prev[k, d]
            if v == -INFINITY:
                new[k, d + 1] = -INFINITY
            else:
                new[k, d + 1] = (v + _self_cost(lr[k], d, duration)) + e[k]
        if k == 0:
            new[0, 0] = -INFINITY
            src[0] = -1
            continue
        best = -INFINITY
        bd = -1
        for d in range(width):
            v = prev[k - 1, d]
            if v == -INFINITY:
                continue
            cand = v + _log1mexp(_self_cost(lr[k - 1], d, duration))
            if cand > best:
                best = cand
                bd = d
        new[k, 0] = best + e[k]
        src[k] = bd


def trellis_step(prev, emissions, log_r, bint duration):
    cdef const double[:, ::1] p = np.ascontiguousarray(prev, dtype=np.float64)
    cdef const double[::1] e = np.ascontiguousarray(emissions, dtype=np.float64)
    cdef const double[::1] lr = np.ascontiguousarray(log_r, dtype=np.float64)
    cdef Py_ssize_t rows = p.shape[0], width = p.shape[1]
    new = np.empty((rows, width + 1), dtype=np.float64)
    src = np.empty(rows, dtype=np.int64)
    cdef double[:, ::1] nv = new
    cdef long long[::1] sv = src
    with nogil:
        _step(p, nv, e, lr, duration, sv, rows, width)
    return new, src


def viterbi_forward(emissions, log_r, bint duration):
    cdef const double[:, ::1] e = np.ascontiguousarray(emissions, dtype=np.float64)
    cdef const double[:, ::1] lr = np.ascontiguousarray(log_r, dtype=np.float64)
    cdef Py_ssize_t n_frames = e.shape[0], n_states = e.shape[1], n
    backptr = np.full((n_frames, n_states), -1, dtype=np.int64)
    a = np.full((n_states, n_frames), -np.inf)
    b = np.full((n_states, n_frames), -np.inf)
    cdef long long[:, ::1] bp = backptr
    cdef double[:, ::1] cur = a
    cdef double[:, ::1] nxt = b
    cdef double[:, ::1] tmp
    cur[0, 0] = e[0, 0]
    with nogil:
        for n in range(1, n_frames):
            # lattice width at frame n - 1 is n
            _step(cur[:, :n], nxt[:, :n + 1], e[n], lr[n], duration, bp[n],
                  n_states, n)
            tmp = cur
            cur = nxt
            nxt = tmp
    return backptr, np.asarray(cur)
