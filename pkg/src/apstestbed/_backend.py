"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python twin
is used. Setting ``APSTESTBED_PURE_PYTHON=1`` forces the fallback.
"""

import logging
import os

logger = logging.getLogger(__name__)

if os.environ.get("APSTESTBED_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as kernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _kernels_py as kernels
        BACKEND = "python"
        logger.debug("compiled kernels unavailable, using pure-Python fallback")

__all__ = ["kernels", "BACKEND"]
