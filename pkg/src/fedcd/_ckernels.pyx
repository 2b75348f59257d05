# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP kernels. Same contract as ``fedcd._pykernels``.

Examples are processed one at a time with fixed loop order, so results are
deterministic but may differ from the numpy path in the last few ulps.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()

cdef enum:
    RELU = 0


cdef inline double _act(double z, int act) noexcept nogil:
    if act == RELU:
        return z if z > 0.0 else 0.0
    return tanh(z)


cdef inline double _act_grad(double z, double h, int act) noexcept nogil:
    if act == RELU:
        return 1.0 if z > 0.0 else 0.0
    return 1.0 - h * h


cdef void _forward_one(int n_layers, const long* sizes, const long* w_off,
                       const long* b_off, const long* a_off, int act,
                       const double* params, const double* xrow,
                       double* zbuf, double* abuf) noexcept nogil:
    """Fill pre-activations and activations for one example."""
    cdef long l, i, j, fan_in, fan_out, wo, ai, ao
    cdef double v
    cdef const double* wrow
    for i in range(sizes[0]):
        abuf[i] = xrow[i]
    for l in range(n_layers):
        fan_in = sizes[l]
        fan_out = sizes[l + 1]
        wo = w_off[l]
        ai = a_off[l]
        ao = a_off[l + 1]
        for j in range(fan_out):
            zbuf[ao + j] = 0.0
        for i in range(fan_in):
            v = abuf[ai + i]
            if v != 0.0:
                wrow = params + wo + i * fan_out
                for j in range(fan_out):
                    zbuf[ao + j] += v * wrow[j]
        for j in range(fan_out):
            zbuf[ao + j] += params[b_off[l] + j]
            if l < n_layers - 1:
                abuf[ao + j] = _act(zbuf[ao + j], act)
            else:
                abuf[ao + j] = zbuf[ao + j]


cdef double _backward_one(int n_layers, const long* sizes, const long* w_off,
                          const long* b_off, const long* a_off, int act,
                          const double* params, long label,
                          const double* zbuf, const double* abuf,
                          double* d_cur, double* d_prev,
                          double* grad) noexcept nogil:
    """Accumulate this example's gradient into ``grad``; return its loss."""
    cdef long C = sizes[n_layers]
    cdef long ao = a_off[n_layers]
    cdef long l, i, j, fan_in, fan_out, wo, bo, ai
    cdef double zmax, s, loss, acc, hv
    cdef double* grow
    cdef const double* wrow
    zmax = abuf[ao]
    for j in range(1, C):
        if abuf[ao + j] > zmax:
            zmax = abuf[ao + j]
    s = 0.0
    for j in range(C):
        d_cur[j] = exp(abuf[ao + j] - zmax)
        s += d_cur[j]
    loss = log(s) + zmax - abuf[ao + label]
    for j in range(C):
        d_cur[j] = d_cur[j] / s
    d_cur[label] -= 1.0

    for l in range(n_layers - 1, -1, -1):
        fan_in = sizes[l]
        fan_out = sizes[l + 1]
        wo = w_off[l]
        bo = b_off[l]
        ai = a_off[l]
        for j in range(fan_out):
            grad[bo + j] += d_cur[j]
        for i in range(fan_in):
            hv = abuf[ai + i]
            if hv != 0.0:
                grow = grad + wo + i * fan_out
                for j in range(fan_out):
                    grow[j] += hv * d_cur[j]
        if l > 0:
            for i in range(fan_in):
                acc = 0.0
                wrow = params + wo + i * fan_out
                for j in range(fan_out):
                    acc += wrow[j] * d_cur[j]
                d_prev[i] = acc * _act_grad(zbuf[ai + i], abuf[ai + i], act)
            for i in range(fan_in):
                d_cur[i] = d_prev[i]
    return loss


def _offsets(sizes):
    sizes = np.ascontiguousarray(sizes, dtype=np.int64)
    n_layers = len(sizes) - 1
    w_off = np.zeros(n_layers, dtype=np.int64)
    b_off = np.zeros(n_layers, dtype=np.int64)
    a_off = np.zeros(n_layers + 1, dtype=np.int64)
    off = 0
    for l in range(n_layers):
        w_off[l] = off
        off += sizes[l] * sizes[l + 1]
        b_off[l] = off
        off += sizes[l + 1]
    for l in range(1, n_layers + 1):
        a_off[l] = a_off[l - 1] + sizes[l - 1]
    units = int(a_off[n_layers] + sizes[n_layers])
    return sizes, w_off, b_off, a_off, units, int(sizes.max())


def logits(sizes, int act, params, X):
    sizes_a, w_off_a, b_off_a, a_off_a, units, _ = _offsets(sizes)
    cdef const long[::1] sz = sizes_a
    cdef long[::1] w_off = w_off_a, b_off = b_off_a, a_off = a_off_a
    cdef const double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef long n = x.shape[0]
    cdef long C = sz[sz.shape[0] - 1]
    cdef long ao = a_off[sz.shape[0] - 1]
    out_a = np.empty((n, C), dtype=np.float64)
    cdef double[:, ::1] out = out_a
    cdef double[::1] zbuf = np.zeros(units), abuf = np.zeros(units)
    cdef long r, j
    cdef int L = sz.shape[0] - 1
    with nogil:
        for r in range(n):
            _forward_one(L, &sz[0], &w_off[0], &b_off[0], &a_off[0], act, &p[0],
                         &x[r, 0], &zbuf[0], &abuf[0])
            for j in range(C):
                out[r, j] = abuf[ao + j]
    return out_a


def predict(sizes, int act, params, X):
    z = logits(sizes, act, params, X)
    return np.argmax(z, axis=1).astype(np.int64)


def loss_and_grad(sizes, int act, params, X, y):
    sizes_a, w_off_a, b_off_a, a_off_a, units, width = _offsets(sizes)
    cdef const long[::1] sz = sizes_a
    cdef long[::1] w_off = w_off_a, b_off = b_off_a, a_off = a_off_a
    cdef const double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const long[::1] lab = np.ascontiguousarray(y, dtype=np.int64)
    cdef long n = x.shape[0]
    grad_a = np.zeros(p.shape[0], dtype=np.float64)
    cdef double[::1] grad = grad_a
    cdef double[::1] zbuf = np.zeros(units), abuf = np.zeros(units)
    cdef double[::1] d_cur = np.zeros(width), d_prev = np.zeros(width)
    cdef double loss = 0.0
    cdef long r, k
    cdef int L = sz.shape[0] - 1
    with nogil:
        for r in range(n):
            _forward_one(L, &sz[0], &w_off[0], &b_off[0], &a_off[0], act, &p[0],
                         &x[r, 0], &zbuf[0], &abuf[0])
            loss += _backward_one(L, &sz[0], &w_off[0], &b_off[0], &a_off[0], act, &p[0],
                                  lab[r], &zbuf[0], &abuf[0], &d_cur[0], &d_prev[0],
                                  &grad[0])
        for k in range(grad.shape[0]):
            grad[k] = grad[k] / n
    return loss / n, grad_a


def sgd_epochs(sizes, int act, double[::1] params, X, y, order, double lr,
               long batch_size):
    sizes_a, w_off_a, b_off_a, a_off_a, units, width = _offsets(sizes)
    cdef const long[::1] sz = sizes_a
    cdef long[::1] w_off = w_off_a, b_off = b_off_a, a_off = a_off_a
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const long[::1] lab = np.ascontiguousarray(y, dtype=np.int64)
    cdef const long[::1] idx = np.ascontiguousarray(order, dtype=np.int64)
    cdef long n = x.shape[0]
    cdef long P = params.shape[0]
    cdef long epochs = idx.shape[0] // n
    cdef double[::1] grad = np.zeros(P)
    cdef double[::1] zbuf = np.zeros(units), abuf = np.zeros(units)
    cdef double[::1] d_cur = np.zeros(width), d_prev = np.zeros(width)
    cdef long e, start, stop, t, r, k, bsz
    cdef double step
    cdef int L = sz.shape[0] - 1
    with nogil:
        for e in range(epochs):
            start = 0
            while start < n:
                stop = start + batch_size
                if stop > n:
                    stop = n
                bsz = stop - start
                for k in range(P):
                    grad[k] = 0.0
                for t in range(start, stop):
                    r = idx[e * n + t]
                    _forward_one(L, &sz[0], &w_off[0], &b_off[0], &a_off[0], act,
                                 &params[0], &x[r, 0], &zbuf[0], &abuf[0])
                    _backward_one(L, &sz[0], &w_off[0], &b_off[0], &a_off[0], act,
                                  &params[0], lab[r], &zbuf[0], &abuf[0], &d_cur[0],
                                  &d_prev[0], &grad[0])
                step = lr / bsz
                for k in range(P):
                    params[k] -= step * grad[k]
                start = stop
