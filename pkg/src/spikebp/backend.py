"""Kernel backend selection.

The hot kernels (5x5 convolution, 2x2 max-pool) exist twice: a numba
@njit version and a vectorized pure-numpy version. The active backend is
chosen once at import from the SPIKEBP_BACKEND environment variable:

    SPIKEBP_BACKEND=numba   force numba (error if numba is unavailable)
    SPIKEBP_BACKEND=numpy   force the pure-numpy fallback
    unset / auto            numba when importable, else numpy
"""

import os

from .errors import ValidationError

_ENV_VAR = "SPIKEBP_BACKEND"

try:
    import numba  # noqa: F401
    _NUMBA_OK = True
except ImportError:
    _NUMBA_OK = False


def _select() -> str:
    choice = os.environ.get(_ENV_VAR, "auto").lower()
    if choice in ("auto", ""):
        return "numba" if _NUMBA_OK else "numpy"
    if choice == "numba":
        if not _NUMBA_OK:
            raise ValidationError(f"{_ENV_VAR}=numba but numba is not importable")
        return "numba"
    if choice == "numpy":
        return "numpy"
    raise ValidationError(f"{_ENV_VAR}={choice!r}: expected auto, numba, or numpy")


ACTIVE = _select()


def numba_available() -> bool:
    return _NUMBA_OK
