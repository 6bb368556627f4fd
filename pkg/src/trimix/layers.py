"""Neural layers: embedding, layer norm, GELU, dropout, feed-forward.

Each layer pairs `forward` with an explicit `backward` that accumulates
parameter gradients into the owned Tensors and returns the input gradient.
Forward caches live on the instance, so one instance handles one in-flight
batch at a time.
"""

from __future__ import annotations

import numpy as np

from trimix import backend
from trimix.errors import ConfigError, VocabularyError
from trimix.tensor import Tensor


def xavier_uniform(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact-CDF GELU: x * Phi(x)."""
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    backend.gelu_forward(x.reshape(-1), out.reshape(-1))
    return out


def gelu_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x)
    dout = np.ascontiguousarray(dout)
    dx = np.empty_like(x)
    backend.gelu_backward(x.reshape(-1), dout.reshape(-1), dx.reshape(-1))
    return dx


class Embedding:
    """Item embedding table; row 0 is the pad vector, pinned to zero."""

    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        if vocab < 1 or dim < 1:
            raise ConfigError(f"vocab and dim must be >= 1, got {vocab}, {dim}")
        table = xavier_uniform(rng, (vocab + 1, dim), dtype)
        table[0] = 0.0
        self.vocab = vocab
        self.table = Tensor(table, name="embedding.table")

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.min(initial=0) < 0 or ids.max(initial=0) > self.vocab:
            raise VocabularyError(
                f"token id out of range [0, {self.vocab}]: "
                f"min={ids.min()}, max={ids.max()}"
            )
        out = self.table.data[ids]
        out[ids == 0] = 0.0  # pads are constant zero, not a learnable row
        return out

    def backward(self, ids: np.ndarray, dout: np.ndarray):
        """Scatter gradients to non-pad rows; row 0 never receives gradient."""
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        grad = self.table.ensure_grad()
        if ids.ndim == 1:
            ids = ids[None, :]
            dout = dout[None, ...]
        backend.embedding_backward(ids, np.ascontiguousarray(dout), grad)

    def params(self):
        return [self.table]


class LayerNorm:
    """Per-vector normalization over the last axis (population variance)."""

    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        if eps <= 0:
            raise ConfigError(f"epsilon must be positive, got {eps}")
        self.dim = dim
        self.eps = eps
        self.alpha = Tensor(np.ones(dim, dtype=dtype), name="norm.alpha")
        self.beta = Tensor(np.zeros(dim, dtype=dtype), name="norm.beta")
        self._xhat = None
        self._inv_std = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x2 = np.ascontiguousarray(x.reshape(-1, self.dim))
        out = np.empty_like(x2)
        xhat = np.empty_like(x2)
        inv_std = np.empty(x2.shape[0], dtype=x2.dtype)
        backend.layernorm_forward(x2, self.alpha.data, self.beta.data, self.eps,
                                  out, xhat, inv_std)
        self._xhat, self._inv_std = xhat, inv_std
        return out.reshape(x.shape)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        d2 = np.ascontiguousarray(dout.reshape(-1, self.dim))
        dx = np.empty_like(d2)
        backend.layernorm_backward(d2, self._xhat, self._inv_std, self.alpha.data,
                                   dx, self.alpha.ensure_grad(), self.beta.ensure_grad())
        return dx.reshape(dout.shape)

    def params(self):
        return [self.alpha, self.beta]


class Dropout:
    """Inverted dropout; identity (bitwise) when not training or rate is 0."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mult = None

    def forward(self, x: np.ndarray, training: bool, rng: np.random.Generator | None):
        if not training or self.rate == 0.0:
            self._mult = None
            return x
        if rng is None:
            raise ConfigError("dropout in training mode needs a random generator")
        draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
        mult = (rng.random(x.shape, dtype=draw_dtype) >= self.rate).astype(x.dtype)
        mult *= np.asarray(1.0 / (1.0 - self.rate), dtype=x.dtype)
        self._mult = mult
        return x * mult

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._mult is None:
            return dout
        return dout * self._mult


class FeedForward:
    """Position-wise 2-layer MLP with GELU; hidden width fixed at 4x dim."""

    def __init__(self, dim: int, rng: np.random.Generator, dropout: float = 0.0,
                 dtype=np.float32):
        hidden = 4 * dim
        self.dim = dim
        self.w1 = Tensor(xavier_uniform(rng, (dim, hidden), dtype), name="ffn.w1")
        self.b1 = Tensor(np.zeros(hidden, dtype=dtype), name="ffn.b1")
        self.w2 = Tensor(xavier_uniform(rng, (hidden, dim), dtype), name="ffn.w2")
        self.b2 = Tensor(np.zeros(dim, dtype=dtype), name="ffn.b2")
        self.dropout = Dropout(dropout)
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        shape = x.shape
        x2 = np.ascontiguousarray(x.reshape(-1, self.dim))
        h = x2 @ self.w1.data + self.b1.data
        a = gelu(h)
        ad = self.dropout.forward(a, training, rng)
        out = ad @ self.w2.data + self.b2.data
        self._cache = (x2, h, ad)
        return out.reshape(shape)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x2, h, ad = self._cache
        d2 = np.ascontiguousarray(dout.reshape(-1, self.dim))
        self.w2.ensure_grad()[...] += ad.T @ d2
        self.b2.ensure_grad()[...] += d2.sum(axis=0)
        dad = d2 @ self.w2.data.T
        da = self.dropout.backward(dad)
        dh = gelu_backward(h, da)
        self.w1.ensure_grad()[...] += x2.T @ dh
        self.b1.ensure_grad()[...] += dh.sum(axis=0)
        dx = dh @ self.w1.data.T
        return dx.reshape(dout.shape)

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]
