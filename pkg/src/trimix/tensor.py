"""Dense tensor primitives with paired forward/backward implementations.

Parameters live in `Tensor` objects (value buffer plus optional gradient
buffer of the same shape). The functional ops below operate on numpy arrays
or Tensors and come with explicit backward companions; `gradient_check`
verifies any analytic gradient against central finite differences.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from trimix.errors import (
    ConfigError,
    DegenerateMaskError,
    DeterminismError,
    DimensionError,
    RankError,
)

MASK_FILL = -1e9  # additive bias applied to dropped raw weights


class Tensor:
    """Row-major numeric array (rank 1-3) with an optional gradient buffer."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, dtype=None, name: str = ""):
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim < 1 or arr.ndim > 3:
            raise RankError(f"Tensor rank must be 1-3, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor data contains non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, dtype={self.data.dtype})"


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def matmul(a, b) -> np.ndarray:
    """Matrix product of two rank-2 arrays."""
    a, b = _data(a), _data(b)
    if a.ndim != 2 or b.ndim != 2:
        raise RankError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def matmul_backward(dout, a, b):
    """Gradients of `matmul`: dA = dOut @ B^T, dB = A^T @ dOut."""
    dout, a, b = _data(dout), _data(a), _data(b)
    return dout @ b.T, a.T @ dout


def transpose(a) -> np.ndarray:
    """Swap the last two axes (rank 2 or batched rank 3); returns a copy."""
    a = _data(a)
    if a.ndim == 2:
        return np.ascontiguousarray(a.T)
    if a.ndim == 3:
        return np.ascontiguousarray(np.swapaxes(a, 1, 2))
    raise RankError(f"transpose expects rank 2 or 3, got shape {a.shape}")


def _slice_axis(axis: str) -> int:
    # 'source' normalizes over source rows j for each target column i;
    # 'target' normalizes along each row.
    if axis == "source":
        return 0
    if axis == "target":
        return 1
    raise ConfigError(f"softmax axis must be 'source' or 'target', got {axis!r}")


def masked_softmax(raw, mask, axis: str = "source") -> np.ndarray:
    """Softmax over the active entries of each normalization slice.

    Dropped positions (mask 0) receive the additive MASK_FILL bias and are
    exact zeros in the output; each slice of active entries sums to 1.
    """
    raw, mask = _data(raw), _data(mask)
    if raw.shape != mask.shape or raw.ndim != 2:
        raise DimensionError(f"raw {raw.shape} and mask {mask.shape} must be equal rank-2 shapes")
    ax = _slice_axis(axis)
    active = mask != 0
    if not active.any(axis=ax).all():
        bad = int(np.flatnonzero(~active.any(axis=ax))[0])
        raise DegenerateMaskError(
            f"mask has no active entries in {'column' if ax == 0 else 'row'} {bad}"
        )
    shifted = raw + np.where(active, 0.0, MASK_FILL).astype(raw.dtype)
    shifted = shifted - shifted.max(axis=ax, keepdims=True)
    e = np.exp(shifted) * active
    out = e / e.sum(axis=ax, keepdims=True)
    return out.astype(raw.dtype, copy=False)


def masked_softmax_backward(dout, out, mask, axis: str = "source") -> np.ndarray:
    """Softmax Jacobian restricted to active entries; dropped raw weights get 0."""
    dout, out, mask = _data(dout), _data(out), _data(mask)
    ax = _slice_axis(axis)
    inner = (dout * out).sum(axis=ax, keepdims=True)
    draw = out * (dout - inner)
    return draw * (mask != 0)


def gradient_check(
    f: Callable[[], float],
    params: Sequence[Tensor],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic gradients and central differences.

    `f` must evaluate the scalar loss and leave analytic gradients in each
    parameter's `.grad` (it may freely zero/accumulate them per call); it is
    called repeatedly with perturbed parameter values. Requires float64
    parameters and a deterministic closure.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ConfigError(f"gradient_check requires float64 params, got {p.dtype}")
        p.ensure_grad()

    loss0 = float(f())
    analytic = [p.grad.copy() for p in params]
    if float(f()) != loss0:
        raise DeterminismError("closure returned differing losses on repeated evaluation")

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(f())
            flat[i] = orig - h
            lm = float(f())
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            rel = abs(an_flat[i] - num) / max(1.0, abs(an_flat[i]), abs(num))
            worst = max(worst, rel)
    return worst
