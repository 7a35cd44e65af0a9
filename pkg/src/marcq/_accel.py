"""Optional numba acceleration.

Set ``MARCQ_NO_NUMBA=1`` to run every kernel as plain Python over numpy
arrays.  Both paths share one source and one random-number generator, so
they produce bit-identical results.
"""
import os

_DISABLED = os.environ.get("MARCQ_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    USING_NUMBA = True

    def jit(fn):
        return _njit(cache=True, nogil=True)(fn)

except ImportError:
    USING_NUMBA = False

    def jit(fn):
        return fn
