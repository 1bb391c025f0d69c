"""Select the kernel implementation at import time.

The compiled ``_kernels`` extension is used when it was built; setting
``PARCELLATE_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("PARCELLATE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"

__all__ = ["BACKEND", "kernels"]
