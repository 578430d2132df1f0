"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``LIFELONG_REID_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels as python_kernels

try:
    if os.environ.get("LIFELONG_REID_PURE_PYTHON", "0") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from ._ext import _kernels as compiled_kernels
except ImportError:
    compiled_kernels = None

_active = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "compiled" if compiled_kernels is not None else "python"

jacobi_eigh = _active.jacobi_eigh
ranked_ap = _active.ranked_ap
