"""Numba switch.

Kernels are compiled with ``numba.njit`` unless ``GIRDERSHM_DISABLE_NUMBA``
is set to a truthy value or numba cannot be imported, in which case the
pure-numpy implementations in :mod:`girdershm.kernels` are used instead.
"""

from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

_FLAG = "GIRDERSHM_DISABLE_NUMBA"


def _flag_set() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    if _flag_set():
        raise ImportError(f"{_FLAG} is set")
    from numba import njit

    HAVE_NUMBA = True
except ImportError as exc:  # pragma: no cover - depends on environment
    logger.debug("numba disabled: %s", exc)
    njit = None
    HAVE_NUMBA = False


def jit(func):
    """Compile ``func`` in nopython mode when numba is enabled, else return None."""
    if not HAVE_NUMBA:
        return None
    return njit(cache=True, nogil=True)(func)
