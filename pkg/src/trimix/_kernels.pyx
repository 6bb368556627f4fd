# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: fused GELU, softmax cross-entropy, Adam, embedding scatter.

Same surface as trimix._kernels_np; trimix.backend picks one at import time.
All floating arguments accept float32 or float64 buffers; arithmetic runs in
double and results are stored back in the buffer dtype.
"""

from libc.math cimport erf, exp, log, sqrt, sqrtf

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused floating:
    float
    double

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


def gelu_forward(floating[::1] x, floating[::1] out):
    """out = x * Phi(x) with Phi the standard normal CDF."""
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v
    for i in range(n):
        v = <double> x[i]
        out[i] = <floating> (v * 0.5 * (1.0 + erf(v * INV_SQRT2)))


def gelu_backward(floating[::1] x, floating[::1] dout, floating[::1] dx):
    """dx = dout * (Phi(x) + x * phi(x))."""
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, cdf, pdf
    for i in range(n):
        v = <double> x[i]
        cdf = 0.5 * (1.0 + erf(v * INV_SQRT2))
        pdf = exp(-0.5 * v * v) * INV_SQRT_2PI
        dx[i] = <floating> ((<double> dout[i]) * (cdf + v * pdf))


def softmax_xent(floating[:, ::1] logits, cnp.int64_t[::1] targets,
                 floating[:, ::1] dlogits):
    """Fused softmax cross-entropy over rows; see the numpy twin for semantics."""
    cdef Py_ssize_t r, j, rows = logits.shape[0], cols = logits.shape[1]
    cdef Py_ssize_t col
    cdef double mx, denom, v, loss = 0.0
    cdef long counted = 0
    for r in range(rows):
        if targets[r] < 1:
            for j in range(cols):
                dlogits[r, j] = 0.0
            continue
        col = <Py_ssize_t> (targets[r] - 1)
        mx = <double> logits[r, 0]
        for j in range(1, cols):
            v = <double> logits[r, j]
            if v > mx:
                mx = v
        denom = 0.0
        for j in range(cols):
            denom += exp((<double> logits[r, j]) - mx)
        loss -= ((<double> logits[r, col]) - mx) - log(denom)
        for j in range(cols):
            dlogits[r, j] = <floating> (exp((<double> logits[r, j]) - mx) / denom)
        dlogits[r, col] -= <floating> 1.0
        counted += 1
    return loss, counted


cdef inline floating _sqrt(floating x) noexcept nogil:
    if floating is float:
        return sqrtf(x)
    else:
        return sqrt(x)


def adam_update(floating[::1] p, floating[::1] g, floating[::1] m,
                floating[::1] v, double lr, double beta1, double beta2,
                double eps, long t):
    """One bias-corrected update step, in place; math in the buffer precision."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef floating gi, mi, vi
    cdef floating b1 = <floating> beta1
    cdef floating b2 = <floating> beta2
    cdef floating one_m_b1 = <floating> (1.0 - beta1)
    cdef floating one_m_b2 = <floating> (1.0 - beta2)
    cdef floating scale = <floating> (lr / (1.0 - beta1 ** t))
    cdef floating inv_c2 = <floating> (1.0 / (1.0 - beta2 ** t))
    cdef floating epsf = <floating> eps
    for i in range(n):
        gi = g[i]
        mi = b1 * m[i] + one_m_b1 * gi
        vi = b2 * v[i] + one_m_b2 * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] = p[i] - scale * mi / (_sqrt(vi * inv_c2) + epsf)


def embedding_backward(cnp.int64_t[:, ::1] ids, floating[:, :, ::1] dout,
                       floating[:, ::1] table_grad):
    """Scatter-add rows of dout into table_grad, skipping pad id 0."""
    cdef Py_ssize_t b, i, j, rows = ids.shape[0], n = ids.shape[1]
    cdef Py_ssize_t d = dout.shape[2]
    cdef cnp.int64_t idx
    for b in range(rows):
        for i in range(n):
            idx = ids[b, i]
            if idx == 0:
                continue
            for j in range(d):
                table_grad[idx, j] += dout[b, i, j]


def layernorm_forward(floating[:, ::1] x, floating[::1] alpha, floating[::1] beta,
                      double eps, floating[:, ::1] out, floating[:, ::1] xhat,
                      floating[::1] inv_std):
    """Row-wise normalization; fills out plus the xhat/inv_std caches."""
    cdef Py_ssize_t r, j, rows = x.shape[0], d = x.shape[1]
    cdef double mu, var, diff, inv
    cdef floating invf, h
    for r in range(rows):
        mu = 0.0
        for j in range(d):
            mu += <double> x[r, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = (<double> x[r, j]) - mu
            var += diff * diff
        var /= d
        inv = 1.0 / sqrt(var + eps)
        invf = <floating> inv
        inv_std[r] = invf
        for j in range(d):
            h = <floating> (((<double> x[r, j]) - mu) * inv)
            xhat[r, j] = h
            out[r, j] = alpha[j] * h + beta[j]


def layernorm_backward(floating[:, ::1] dout, floating[:, ::1] xhat,
                       floating[::1] inv_std, floating[::1] alpha,
                       floating[:, ::1] dx, floating[::1] dalpha,
                       floating[::1] dbeta):
    """Input gradient into dx; accumulates (+=) into dalpha / dbeta."""
    cdef Py_ssize_t r, j, rows = dout.shape[0], d = dout.shape[1]
    cdef double mean_d, mean_dx, g
    for r in range(rows):
        mean_d = 0.0
        mean_dx = 0.0
        for j in range(d):
            g = (<double> dout[r, j]) * (<double> alpha[j])
            mean_d += g
            mean_dx += g * (<double> xhat[r, j])
            dalpha[j] += dout[r, j] * xhat[r, j]
            dbeta[j] += dout[r, j]
        mean_d /= d
        mean_dx /= d
        for j in range(d):
            g = (<double> dout[r, j]) * (<double> alpha[j])
            dx[r, j] = <floating> ((<double> inv_std[r]) *
                                   (g - mean_d - (<double> xhat[r, j]) * mean_dx))
