# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled SGD loop for the two-layer teacher-student model."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, sqrt

cnp.import_array()


cdef inline double act_value(double x, int code) noexcept nogil:
    if code == 0:
        return x
    if code == 1:
        return 1.0 / (1.0 + exp(-x))
    if code == 2:
        return tanh(x)
    return x if x > 0.0 else 0.0


cdef inline double act_deriv(double x, int code) noexcept nogil:
    cdef double s
    if code == 0:
        return 1.0
    if code == 1:
        s = 1.0 / (1.0 + exp(-x))
        return s * (1.0 - s)
    if code == 2:
        s = tanh(x)
        return 1.0 - s * s
    return 1.0 if x > 0.0 else 0.0


def sgd_epochs(double[:, ::1] w1, double[::1] w2, const double[:, ::1] x,
               const double[::1] y, const long[:, ::1] orders, double lr, int code,
               int batch, double abort_level):
    """Run SGD in place on (w1, w2).

    x holds one sample per row (M x d).  orders[e] lists the sample indices
    visited in epoch e.  Returns (epochs_done, epoch_losses) where
    epoch_losses[e] is the mean pre-update squared error seen during epoch e;
    stops after the first epoch whose loss exceeds abort_level.
    """
    cdef Py_ssize_t n1 = w1.shape[0], d = w1.shape[1], m = orders.shape[1]
    cdef Py_ssize_t n_epochs = orders.shape[0]
    cdef Py_ssize_t e, start, stop, b, k, i, j
    cdef double inv_sd = 1.0 / sqrt(<double>d)
    cdef double inv_sn = 1.0 / sqrt(<double>n1)
    cdef double inv_snd = inv_sd * inv_sn
    cdef double yhat, r, acc, scale, loss_sum
    cdef double[::1] q = np.empty(n1)
    cdef double[::1] h = np.empty(n1)
    cdef double[::1] s = np.empty(n1)
    cdef double[:, ::1] g1 = np.zeros((n1, d))
    cdef double[::1] g2 = np.zeros(n1)
    cdef double[::1] losses = np.zeros(n_epochs)
    cdef Py_ssize_t done = 0
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if code < 0 or code > 3:
        raise ValueError(f"unknown activation code {code}")
    if w2.shape[0] != n1 or x.shape[1] != d or y.shape[0] != x.shape[0]:
        raise ValueError("inconsistent shapes for w1, w2, x, y")
    if m > 0 and (np.min(orders) < 0 or np.max(orders) >= x.shape[0]):
        raise ValueError("orders holds an index outside the sample range")
    with nogil:
        for e in range(n_epochs):
            loss_sum = 0.0
            start = 0
            while start < m:
                stop = start + batch
                if stop > m:
                    stop = m
                scale = lr / <double>(stop - start)
                if stop - start > 1:
                    g1[:, :] = 0.0
                    g2[:] = 0.0
                for b in range(start, stop):
                    k = orders[e, b]
                    yhat = 0.0
                    for i in range(n1):
                        acc = 0.0
                        for j in range(d):
                            acc = acc + w1[i, j] * x[k, j]
                        q[i] = acc * inv_sd
                        h[i] = act_value(q[i], code)
                        yhat = yhat + w2[i] * h[i]
                    yhat = yhat * inv_sn
                    r = yhat - y[k]
                    loss_sum = loss_sum + r * r
                    r = 2.0 * r
                    if stop - start == 1:
                        for i in range(n1):
                            s[i] = scale * r * w2[i] * act_deriv(q[i], code) * inv_snd
                        for i in range(n1):
                            w2[i] = w2[i] - scale * r * h[i] * inv_sn
                            for j in range(d):
                                w1[i, j] = w1[i, j] - s[i] * x[k, j]
                    else:
                        for i in range(n1):
                            s[i] = r * w2[i] * act_deriv(q[i], code) * inv_snd
                            g2[i] = g2[i] + r * h[i] * inv_sn
                            for j in range(d):
                                g1[i, j] = g1[i, j] + s[i] * x[k, j]
                if stop - start > 1:
                    for i in range(n1):
                        w2[i] = w2[i] - scale * g2[i]
                        for j in range(d):
                            w1[i, j] = w1[i, j] - scale * g1[i, j]
                start = stop
            losses[e] = loss_sum / <double>m
            done = e + 1
            if not (losses[e] <= abort_level):
                break
    return done, np.asarray(losses[:done])
