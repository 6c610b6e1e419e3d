"""Numba acceleration shim.

Hot kernels are written once in numba-compatible numpy style and decorated
with :func:`njit`.  Setting the environment variable ``UGKP_NUMBA=0`` (or an
absent numba install) turns the decorator into a no-op so the same source
runs as plain Python/numpy.  ``python -m ugkp.benchmark`` compares the two
lanes.
"""

import os

NUMBA_ENABLED = os.environ.get("UGKP_NUMBA", "1") != "0"

if NUMBA_ENABLED:
    try:
        import numba
        from numba import njit, prange  # noqa: F401
        from numba import set_num_threads  # noqa: F401

        # the default TBB layer is version-sensitive; workqueue always works
        numba.config.THREADING_LAYER = "workqueue"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range

    def set_num_threads(n):
        pass
