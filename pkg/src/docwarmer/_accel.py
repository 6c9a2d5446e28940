"""Numba dispatch.

Setting ``DOCWARMER_DISABLE_NUMBA=1`` makes the public kernels in
:mod:`kernels` use their vectorised numpy fallbacks. The compiled versions
stay importable either way so tests and the benchmark can compare both.
"""
from __future__ import annotations

import os

_FLAG = "DOCWARMER_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA: bool = _numba is not None and _numba_requested()


def njit(fn):
    """``numba.njit(cache=True)``, or the identity when numba is not installed."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True)(fn)
