"""Backend selection for the numeric kernels.

Every hot kernel ships twice: a numba ``@njit`` version and a pure-numpy
version. The numba path is used unless ``NANOCOUPLING_BACKEND=numpy`` is set
in the environment (or numba cannot be imported).
"""

import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

ENV_FLAG = "NANOCOUPLING_BACKEND"


def backend_name():
    """Return ``"numba"`` or ``"numpy"`` according to the environment."""
    requested = os.environ.get(ENV_FLAG, "numba").strip().lower()
    if requested == "numpy" or not _HAVE_NUMBA:
        return "numpy"
    return "numba"


def use_numba():
    return backend_name() == "numba"


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator without numba."""
    kwargs.setdefault("cache", True)
    if not _HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
