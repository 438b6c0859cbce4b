"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the NumPy
implementation is the fallback and the reference for parity tests. Set
ATTRIVIS_BACKEND=numpy or ATTRIVIS_BACKEND=compiled to force a choice
(forcing "compiled" raises if the extension is unavailable).
"""

import os

from attrivis._kernels import _ref

try:
    from attrivis._kernels import _core
except ImportError:
    _core = None

_FUNCS = (
    "conv_forward",
    "conv_backward",
    "conv_input_grad",
    "maxpool_forward",
    "maxpool_scatter",
)


def _select():
    choice = os.environ.get("ATTRIVIS_BACKEND", "").strip().lower()
    if choice == "numpy":
        return _ref, "numpy"
    if choice == "compiled":
        if _core is None:
            raise ImportError(
                "ATTRIVIS_BACKEND=compiled but the attrivis._kernels._core "
                "extension is not built"
            )
        return _core, "compiled"
    if choice:
        raise ValueError(f"unknown ATTRIVIS_BACKEND value: {choice!r}")
    if _core is not None:
        return _core, "compiled"
    return _ref, "numpy"


_impl, BACKEND = _select()

conv_forward = _impl.conv_forward
conv_backward = _impl.conv_backward
conv_input_grad = _impl.conv_input_grad
maxpool_forward = _impl.maxpool_forward
maxpool_scatter = _impl.maxpool_scatter

__all__ = list(_FUNCS) + ["BACKEND"]
