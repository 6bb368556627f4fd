"""Causal token mixing via masked weight matrices.

A mixing branch multiplies the transposed sequence representation by the
softmax of a raw n-by-n weight matrix whose dropped entries are masked out.
The global mask keeps the causal upper triangle; the local mask further
restricts mixing to fixed-length sessions (block-diagonal triangles). The
dual-branch mixer combines both, in parallel or in series.
"""

from __future__ import annotations

import numpy as np

from trimix.errors import ConfigError
from trimix.layers import gelu, gelu_backward, xavier_uniform
from trimix.tensor import Tensor, masked_softmax, masked_softmax_backward

VARIANTS = ("full", "global", "local", "eye", "square")
COMBINES = ("parallel_add", "parallel_concat", "serial_gl", "serial_lg")


def build_global_mask(n: int) -> np.ndarray:
    """Causal mask: entry (j, i) active iff source j <= target i."""
    if n < 1:
        raise ConfigError(f"sequence length must be >= 1, got {n}")
    return np.triu(np.ones((n, n), dtype=np.float32))


def build_local_mask(n: int, sessions: int) -> np.ndarray:
    """Within-session causal mask: s length-l triangles on the diagonal."""
    if n < 1:
        raise ConfigError(f"sequence length must be >= 1, got {n}")
    if sessions < 1 or n % sessions != 0:
        raise ConfigError(f"session count {sessions} must divide sequence length {n}")
    length = n // sessions
    mask = np.zeros((n, n), dtype=np.float32)
    tri = np.triu(np.ones((length, length), dtype=np.float32))
    for k in range(sessions):
        lo = k * length
        mask[lo : lo + length, lo : lo + length] = tri
    return mask


def identity_mask(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.float32)


def full_mask(n: int) -> np.ndarray:
    return np.ones((n, n), dtype=np.float32)


class MixBranch:
    """One masked token-mixing MLP: gelu(x^T . softmax(raw)) transposed back."""

    def __init__(self, mask: np.ndarray, axis: str = "source", dtype=np.float32,
                 name: str = "mix"):
        n = mask.shape[0]
        self.mask = mask
        self.axis = axis
        self.raw = Tensor(np.ones((n, n), dtype=dtype), name=f"{name}.raw")
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        probs = masked_softmax(self.raw.data, self.mask, self.axis)
        pre = np.matmul(probs.T.copy(), x)
        self._cache = (x, probs, pre)
        return gelu(pre)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x, probs, pre = self._cache
        dpre = gelu_backward(pre, dout)
        if x.ndim == 3:
            dprobs = np.tensordot(x, dpre, axes=([0, 2], [0, 2]))
        else:
            dprobs = x @ np.ascontiguousarray(dpre.T)
        draw = masked_softmax_backward(dprobs, probs, self.mask, self.axis)
        self.raw.ensure_grad()[...] += draw
        return np.matmul(probs, dpre)

    def params(self):
        return [self.raw]


class TriangularMixer:
    """Token mixer with causal global and session-local branches.

    Variants: 'full' (both branches), 'global', 'local', 'eye' (identity,
    no cross-token mixing) and 'square' (unrestricted mixing). The full
    variant combines branches per `combine`: element-wise addition, concat
    plus linear merge, or the two serial orders.
    """

    def __init__(self, n: int, dim: int, sessions: int = 1, variant: str = "full",
                 combine: str = "parallel_add", axis: str = "source",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown mixer variant {variant!r}; valid: {', '.join(VARIANTS)}")
        if combine not in COMBINES:
            raise ConfigError(f"unknown combine mode {combine!r}; valid: {', '.join(COMBINES)}")
        self.n = n
        self.variant = variant
        self.combine = combine
        self.sessions = sessions
        self.merge: Tensor | None = None
        if variant == "full":
            self.global_branch = MixBranch(build_global_mask(n), axis, dtype, "mixer.global")
            self.local_branch = MixBranch(build_local_mask(n, sessions), axis, dtype, "mixer.local")
            if combine == "parallel_concat":
                if rng is None:
                    raise ConfigError("parallel_concat needs a generator to init the merge matrix")
                self.merge = Tensor(xavier_uniform(rng, (2 * dim, dim), dtype), name="mixer.merge")
        elif variant == "global":
            self.branch = MixBranch(build_global_mask(n), axis, dtype, "mixer.global")
        elif variant == "local":
            self.branch = MixBranch(build_local_mask(n, sessions), axis, dtype, "mixer.local")
        elif variant == "eye":
            self.branch = MixBranch(identity_mask(n), axis, dtype, "mixer.eye")
        else:
            self.branch = MixBranch(full_mask(n), axis, dtype, "mixer.square")
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.variant != "full":
            return self.branch.forward(x)
        if self.combine == "parallel_add":
            return self.global_branch.forward(x) + self.local_branch.forward(x)
        if self.combine == "parallel_concat":
            g = self.global_branch.forward(x)
            loc = self.local_branch.forward(x)
            cat = np.concatenate([g, loc], axis=-1)
            self._cache = cat
            return np.matmul(cat, self.merge.data)
        if self.combine == "serial_gl":
            return self.local_branch.forward(self.global_branch.forward(x))
        return self.global_branch.forward(self.local_branch.forward(x))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self.variant != "full":
            return self.branch.backward(dout)
        if self.combine == "parallel_add":
            return self.global_branch.backward(dout) + self.local_branch.backward(dout)
        if self.combine == "parallel_concat":
            cat = self._cache
            flat = cat.reshape(-1, cat.shape[-1])
            self.merge.ensure_grad()[...] += flat.T @ dout.reshape(-1, dout.shape[-1])
            dcat = np.matmul(dout, self.merge.data.T)
            half = cat.shape[-1] // 2
            return (self.global_branch.backward(dcat[..., :half])
                    + self.local_branch.backward(np.ascontiguousarray(dcat[..., half:])))
        if self.combine == "serial_gl":
            return self.global_branch.backward(self.local_branch.backward(dout))
        return self.local_branch.backward(self.global_branch.backward(dout))

    def params(self):
        if self.variant != "full":
            return self.branch.params()
        out = self.global_branch.params() + self.local_branch.params()
        if self.merge is not None:
            out.append(self.merge)
        return out
