"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``AIRCOMP_FL_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("AIRCOMP_FL_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
    else:
        BACKEND = "compiled"
else:
    _impl = _kernels_py

ratio_grid_search = _impl.ratio_grid_search
