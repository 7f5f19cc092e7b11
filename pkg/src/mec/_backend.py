"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Setting ``MEC_PURE_PYTHON=1`` forces the fallback.
"""

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)


def _load_compiled():
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()

if _compiled is not None and not os.environ.get("MEC_PURE_PYTHON"):
    kernels = _compiled
    BACKEND = "compiled"
else:
    kernels = _kernels_py
    BACKEND = "python"
    if _compiled is None:
        logger.debug("compiled kernels unavailable; using the numpy fallback")


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def get_kernels(name=None):
    """Return the kernel module for ``name`` (``"compiled"``/``"python"``)."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("the compiled kernel extension is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
