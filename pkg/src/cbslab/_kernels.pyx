# cython: language_level=3
"""Compiled inner loops.

Both kernels mirror ``cbslab._kernels_py`` line for line; that module is
the reference and the fallback.
"""
import numpy as np

from libc.math cimport isfinite


def oracle_moments(const double[::1] lam, const double[::1] u_bias0, double gamma,
                   long batch, long n_steps, double sigma2, bint paper_mode):
    """Diagonal bias/variance covariance recursion with averaged-iterate risk.

    Returns ``(bias, variance, min_entry)`` where ``min_entry`` is the most
    negative diagonal entry seen along the way.
    """
    cdef Py_ssize_t d = lam.shape[0]
    cdef Py_ssize_t i
    cdef long t
    cdef double c_quad, c_trace, tb, tv, q, lam_i, src, bias, var
    cdef double min_entry = 0.0

    ub_arr = np.array(u_bias0, dtype=np.float64)
    uv_arr = np.zeros(d)
    sum_b_arr = np.zeros(d)
    sum_v_arr = np.zeros(d)
    z_b_arr = np.zeros(d)
    z_v_arr = np.zeros(d)
    q_arr = np.empty(d)
    cdef double[::1] ub = ub_arr
    cdef double[::1] uv = uv_arr
    cdef double[::1] sum_b = sum_b_arr
    cdef double[::1] sum_v = sum_v_arr
    cdef double[::1] z_b = z_b_arr
    cdef double[::1] z_v = z_v_arr
    cdef double[::1] qs = q_arr

    if paper_mode:
        c_quad = 0.0
        c_trace = 2.0 * gamma * gamma / batch
    else:
        c_quad = gamma * gamma / batch
        c_trace = gamma * gamma / batch
    src = gamma * gamma * sigma2 / batch

    for i in range(d):
        qs[i] = 1.0 - gamma * lam[i]

    with nogil:
        for t in range(n_steps):
            for i in range(d):
                z_b[i] = sum_b[i] + qs[i] * z_b[i]
                z_v[i] = sum_v[i] + qs[i] * z_v[i]
                sum_b[i] += ub[i]
                sum_v[i] += uv[i]
            if t == n_steps - 1:
                break
            tb = 0.0
            tv = 0.0
            for i in range(d):
                tb += lam[i] * ub[i]
                tv += lam[i] * uv[i]
            for i in range(d):
                lam_i = lam[i]
                q = qs[i]
                ub[i] = q * q * ub[i] + c_quad * lam_i * lam_i * ub[i] + c_trace * lam_i * tb
                uv[i] = (q * q * uv[i] + c_quad * lam_i * lam_i * uv[i]
                         + c_trace * lam_i * tv + src * lam_i)
                if ub[i] < min_entry:
                    min_entry = ub[i]
                if uv[i] < min_entry:
                    min_entry = uv[i]

        bias = 0.0
        var = 0.0
        for i in range(d):
            bias += lam[i] * (sum_b[i] + 2.0 * qs[i] * z_b[i])
            var += lam[i] * (sum_v[i] + 2.0 * qs[i] * z_v[i])
    bias /= (<double>n_steps) * n_steps
    var /= (<double>n_steps) * n_steps
    return bias, var, min_entry


def sgd_chunk(const double[:, ::1] x, const double[::1] y, double[::1] w, double[::1] w_sum,
              double gamma, long batch, long step0):
    """Run mini-batch SGD over consecutive batches of ``x``/``y`` in place.

    ``w_sum`` accumulates each iterate before it is updated, so after the
    final chunk it holds ``w_0 + ... + w_{n-1}``. Returns the global index of
    the first step producing a non-finite coordinate, or -1.
    """
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t n_batches = rows // batch
    cdef Py_ssize_t s, j, k, row
    cdef double r, scale = gamma / batch
    cdef long bad = -1
    grad_arr = np.zeros(d)
    cdef double[::1] grad = grad_arr

    with nogil:
        for s in range(n_batches):
            for k in range(d):
                w_sum[k] += w[k]
                grad[k] = 0.0
            for j in range(batch):
                row = s * batch + j
                r = -y[row]
                for k in range(d):
                    r += x[row, k] * w[k]
                for k in range(d):
                    grad[k] += r * x[row, k]
            for k in range(d):
                w[k] -= scale * grad[k]
            for k in range(d):
                if not isfinite(w[k]):
                    bad = step0 + s
                    break
            if bad >= 0:
                break
    return bad
