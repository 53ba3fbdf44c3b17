"""
Numba switch for the hot kernels.

Set ``EVORBIT_DISABLE_NUMBA=1`` to force the pure-numpy code paths. If numba
cannot be imported the numpy paths are used as well.
"""
import os

_FLAG = os.environ.get("EVORBIT_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(func):
            return func

        return wrapper


USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
