"""Kernel backend selection.

The compiled extension `trimix._kernels` is preferred when importable; the
numpy module `trimix._kernels_np` is the fallback. `TRIMIX_KERNELS=numpy`
forces the fallback, `TRIMIX_KERNELS=compiled` makes a missing extension a
hard error.
"""

import os

from trimix import _kernels_np

_choice = os.environ.get("TRIMIX_KERNELS", "auto").strip().lower()

if _choice in ("auto", "", "compiled", "c"):
    try:
        from trimix import _kernels as _impl

        KERNEL_BACKEND = "compiled"
    except ImportError:
        if _choice in ("compiled", "c"):
            raise ImportError(
                "TRIMIX_KERNELS=compiled but the trimix._kernels extension "
                "is not built; reinstall the package or unset the variable"
            )
        _impl = _kernels_np
        KERNEL_BACKEND = "numpy"
elif _choice in ("numpy", "py", "python"):
    _impl = _kernels_np
    KERNEL_BACKEND = "numpy"
else:
    raise ValueError(f"unrecognized TRIMIX_KERNELS value: {_choice!r}")

gelu_forward = _impl.gelu_forward
gelu_backward = _impl.gelu_backward
softmax_xent = _impl.softmax_xent
adam_update = _impl.adam_update
embedding_backward = _impl.embedding_backward
layernorm_forward = _impl.layernorm_forward
layernorm_backward = _impl.layernorm_backward


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["numpy"]
    try:
        from trimix import _kernels  # noqa: F401

        names.insert(0, "compiled")
    except ImportError:
        pass
    return names
