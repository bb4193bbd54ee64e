"""Numba switch.

Set ``SEGLATENT_NUMBA=0`` before import to force the pure-numpy kernels.
When numba is not importable the numpy kernels are used regardless.
"""
import os

_flag = os.environ.get("SEGLATENT_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    if not _requested:
        raise ImportError("numba disabled by SEGLATENT_NUMBA")
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(*args, **kwargs):
    """``numba.njit`` with the package defaults, or a no-op decorator."""
    if not HAS_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    options = dict(numba_default)
    options.update(kwargs)
    if len(args) == 1 and callable(args[0]):
        return numba.njit(**options)(args[0])
    return numba.njit(*args, **options)
