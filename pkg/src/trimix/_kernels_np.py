"""Numpy implementations of the hot kernels.

Mirrors the surface of the compiled module `trimix._kernels` so either can
back `trimix.backend`. All array arguments must be C-contiguous; `x`, `dout`
and `dx` style pairs must share shape and dtype.
"""

import numpy as np
from scipy.special import erf

INV_SQRT2 = 1.0 / np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu_forward(x, out):
    """out = x * Phi(x) with Phi the standard normal CDF."""
    np.multiply(x, 0.5 * (1.0 + erf(x * INV_SQRT2)), out=out)


def gelu_backward(x, dout, dx):
    """dx = dout * (Phi(x) + x * phi(x))."""
    phi = np.exp(-0.5 * x * x) * INV_SQRT_2PI
    cdf = 0.5 * (1.0 + erf(x * INV_SQRT2))
    np.multiply(dout, cdf + x * phi, out=dx)


def softmax_xent(logits, targets, dlogits):
    """Fused softmax cross-entropy over rows of `logits`.

    `targets[r] >= 1` selects class column `targets[r] - 1`; values <= 0 mark
    ignored rows (zero gradient, no loss). Writes softmax-minus-onehot rows
    into `dlogits` and returns (loss_sum, counted_rows), loss in float64.
    """
    counted = targets >= 1
    n_counted = int(np.count_nonzero(counted))
    dlogits[...] = 0.0
    if n_counted == 0:
        return 0.0, 0
    rows = logits[counted].astype(np.float64, copy=False)
    mx = rows.max(axis=1, keepdims=True)
    ex = np.exp(rows - mx)
    denom = ex.sum(axis=1, keepdims=True)
    probs = ex / denom
    cols = targets[counted] - 1
    idx = np.arange(n_counted)
    log_p = (rows - mx)[idx, cols] - np.log(denom[:, 0])
    loss = -float(log_p.sum())
    grad = probs
    grad[idx, cols] -= 1.0
    dlogits[counted] = grad.astype(dlogits.dtype, copy=False)
    return loss, n_counted


def adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    """One bias-corrected update step, in place on flat arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    scale = lr / (1.0 - beta1**t)
    denom = np.sqrt(v / (1.0 - beta2**t)) + eps
    p -= (scale * m / denom).astype(p.dtype, copy=False)


def embedding_backward(ids, dout, table_grad):
    """Scatter-add rows of `dout` into `table_grad`, skipping pad id 0."""
    flat_ids = ids.reshape(-1)
    flat_dout = dout.reshape(-1, dout.shape[-1])
    keep = flat_ids != 0
    np.add.at(table_grad, flat_ids[keep], flat_dout[keep])


def layernorm_forward(x, alpha, beta, eps, out, xhat, inv_std):
    """Row-wise normalization (population variance) with scale and bias.

    Fills `out`, plus the `xhat` and `inv_std` caches the backward needs.
    """
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1)
    inv_std[...] = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat[...] = (x - mu) * inv_std[:, None]
    np.multiply(xhat, alpha, out=out)
    out += beta


def layernorm_backward(dout, xhat, inv_std, alpha, dx, dalpha, dbeta):
    """Input gradient into `dx`; accumulates (+=) into `dalpha` / `dbeta`."""
    dalpha += (dout * xhat).sum(axis=0)
    dbeta += dout.sum(axis=0)
    dxhat = dout * alpha
    mean_d = dxhat.mean(axis=1, keepdims=True)
    mean_dx = (dxhat * xhat).mean(axis=1, keepdims=True)
    np.multiply(inv_std[:, None], dxhat - mean_d - xhat * mean_dx, out=dx)
