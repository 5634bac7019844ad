"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The compiled extension (``stdense._kernels._fast``) is used when it imported
cleanly; otherwise the numpy implementations take over with identical
signatures and semantics.  ``STDENSE_BACKEND=numpy`` or ``=cython`` forces
the choice (the latter raises if the extension is unavailable).
"""

import os

from . import numpy_backend

_FUNCS = (
    "im2col_nhwc",
    "col2im_nhwc",
    "relu_backward",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "avgpool2x2_forward",
    "avgpool2x2_backward",
    "bilinear_forward",
    "bilinear_backward",
)

try:
    from . import _fast
except ImportError:
    _fast = None

_choice = os.environ.get("STDENSE_BACKEND", "auto").lower()
if _choice not in ("auto", "numpy", "cython"):
    raise ValueError(f"STDENSE_BACKEND must be auto, numpy, or cython, got {_choice!r}")
if _choice == "cython" and _fast is None:
    raise ImportError("STDENSE_BACKEND=cython but the compiled extension is not available")

if _choice == "numpy" or _fast is None:
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    _impl = _fast
    BACKEND = "cython"

im2col_nhwc = _impl.im2col_nhwc
col2im_nhwc = _impl.col2im_nhwc
relu_backward = _impl.relu_backward
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
avgpool2x2_forward = _impl.avgpool2x2_forward
avgpool2x2_backward = _impl.avgpool2x2_backward
bilinear_forward = _impl.bilinear_forward
bilinear_backward = _impl.bilinear_backward

__all__ = ["BACKEND", *_FUNCS]
