"""Pick the Stieltjes kernels: compiled if importable, else pure Python.

Set ``GLMCX_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("GLMCX_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
else:
    try:
        from . import _ckernels as kernels
    except ImportError:  # pragma: no cover - depends on the build
        kernels = _kernels_py

BACKEND = "python" if kernels is _kernels_py else "compiled"

OK = _kernels_py.OK
NOT_CONVERGED = _kernels_py.NOT_CONVERGED
LEFT_UPPER_HALF = _kernels_py.LEFT_UPPER_HALF
