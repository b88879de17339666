"""Convolution kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
NumPy implementation is the fallback. Set MMFUSION_FORCE_NUMPY=1 to skip the
extension (used by the benchmark and for debugging). Both backends share the
same contract and are cross-checked in the test suite.
"""

import os

from . import reference

if os.environ.get("MMFUSION_FORCE_NUMPY"):
    _impl = reference
else:
    try:
        from . import _convext as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = reference

BACKEND = _impl.BACKEND
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
