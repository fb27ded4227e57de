"""Backend selection for the hot kernels.

Kernels are plain Python/numpy functions decorated with :func:`kernel`.  When
numba is importable and ``SPATIALBD_DISABLE_NUMBA`` is unset (or ``0``), they
are compiled with ``numba.njit``; otherwise the decorated function is returned
unchanged.  Either way the undecorated function stays reachable as
``.py_func`` so tests can run both paths side by side.
"""
from __future__ import annotations

import os

_FLAG = "SPATIALBD_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "0").strip().lower() in ("", "0", "false", "no")


try:
    if not _numba_requested():
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

NUMBA_ENABLED = _numba is not None
BACKEND = "numba" if NUMBA_ENABLED else "python"

_NJIT_OPTS = dict(cache=True, nogil=True, error_model="numpy")


def kernel(func):
    """Compile ``func`` with numba if enabled; always expose ``py_func``."""
    if _numba is None:
        func.py_func = func
        return func
    return _numba.njit(**_NJIT_OPTS)(func)
