"""Optional numba acceleration.

Set ``LIQODE_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The flag is read once at import time.
"""

import os

_DISABLED = os.environ.get("LIQODE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the system TBB may be too old; avoid probing it first
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised through the env flag in a subprocess
    numba = None
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(func):
            return func

        return wrapper

    prange = range


def set_threads(n):
    """Bound numba's thread pool; a no-op when numba is off."""
    if NUMBA_ENABLED and n is not None and n > 0:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
