"""Kernel backend selection.

The compiled extension is preferred; set ACTIVEKG_PURE_PY=1 to force the
numpy fallback (used by the kernel equivalence tests and the benchmark).
"""

import os

from . import _kernels_py

if os.environ.get("ACTIVEKG_PURE_PY") == "1":
    kernels = _kernels_py
else:
    try:
        from . import _kernels_cy as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py

BACKEND_NAME: str = kernels.NAME
