"""Optional numba acceleration.

Hot kernels are written once as plain loops and compiled with numba when it
is importable. Setting ``CONVRES_DISABLE_NUMBA=1`` (or any of ``true``,
``yes``) before import forces the pure-numpy fallbacks, which is how the
benchmark and the equivalence tests compare both paths.
"""

from __future__ import annotations

import os

_flag = os.environ.get("CONVRES_DISABLE_NUMBA", "").strip().lower()

try:
    if _flag in {"1", "true", "yes"}:
        raise ImportError("numba disabled by CONVRES_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(func):
    """Compile ``func`` in nopython mode, or return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)
