"""Layer kernels with a selectable backend.

The numba loop kernels are used when numba imports cleanly. Setting
``MCDNN_BACKEND=numpy`` in the environment (read once, at import) forces the
vectorized numpy fallback. Only the numba backend carries the fixed
accumulation-order guarantee; the fallback agrees to floating-point rounding.
"""
import os

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_requested = os.environ.get("MCDNN_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"MCDNN_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba" and _numba is not None:
    _impl = _numba
    BACKEND = "numba"
else:
    _impl = _numpy
    BACKEND = "numpy"

conv_forward = _impl.conv_forward
conv_backward = _impl.conv_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
fc_forward = _impl.fc_forward
fc_backward = _impl.fc_backward


def implementations():
    """Return ``{name: module}`` for every importable backend."""
    impls = {"numpy": _numpy}
    if _numba is not None:
        impls["numba"] = _numba
    return impls


__all__ = [
    "BACKEND",
    "conv_forward",
    "conv_backward",
    "maxpool_forward",
    "maxpool_backward",
    "fc_forward",
    "fc_backward",
    "implementations",
]
