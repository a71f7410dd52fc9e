"""JIT switch for the simulation kernels.

Set ``MIRAGE_LAB_NO_NUMBA=1`` to run every kernel as plain Python over numpy
arrays. Both paths execute the same source and produce identical results.
"""

import functools
import os

import numpy as np

_DISABLED = os.environ.get("MIRAGE_LAB_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USING_NUMBA = numba is not None and not _DISABLED


def kernel(fn):
    """Compile ``fn`` with ``numba.njit`` or wrap it for interpreted execution.

    The interpreted wrapper silences numpy's scalar overflow warnings, since the
    hashing and generator kernels rely on wrapping uint64 arithmetic.
    """
    if USING_NUMBA:
        return numba.njit(fn)

    @functools.wraps(fn)
    def wrapper(*args):
        with np.errstate(over="ignore"):
            return fn(*args)

    wrapper.py_func = fn
    return wrapper
