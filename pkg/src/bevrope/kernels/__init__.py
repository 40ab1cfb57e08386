"""Kernel backend selection.

Imports the compiled Cython core when it is built, the pure numpy module
otherwise. BEVROPE_BACKEND=pure forces the fallback; BEVROPE_BACKEND=compiled
makes a missing extension an error instead of a silent fallback.
"""
import os

from bevrope.kernels import pure

_requested = os.environ.get("BEVROPE_BACKEND", "").lower()

if _requested == "pure":
    _impl = pure
elif _requested in ("", "compiled"):
    try:
        from bevrope.kernels import _core as _impl
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = pure
else:
    raise ValueError(f"BEVROPE_BACKEND must be 'pure' or 'compiled', got {_requested!r}")

BACKEND = "pure" if _impl is pure else "compiled"

softmax_rows = _impl.softmax_rows
softmax_rows_grad = _impl.softmax_rows_grad
layer_norm = _impl.layer_norm
layer_norm_grad = _impl.layer_norm_grad
rotate_pairs = _impl.rotate_pairs
rotate_pairs_grad = _impl.rotate_pairs_grad
gelu = _impl.gelu
gelu_grad = _impl.gelu_grad
sigmoid = _impl.sigmoid
sigmoid_grad = _impl.sigmoid_grad
raster_gauss = _impl.raster_gauss

KERNELS = [
    "softmax_rows", "softmax_rows_grad", "layer_norm", "layer_norm_grad",
    "rotate_pairs", "rotate_pairs_grad", "gelu", "gelu_grad",
    "sigmoid", "sigmoid_grad", "raster_gauss",
]
