"""JIT switch for the hot kernels.

Set ``CTEN_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``) to run the
pure-numpy code paths. The flag is read once at import time.
"""

import os

_TRUTHY = {"1", "true", "yes", "on"}


def _flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in _TRUTHY


NUMBA_REQUESTED = not (_flag("CTEN_DISABLE_NUMBA") or _flag("NUMBA_DISABLE_JIT"))

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = NUMBA_REQUESTED and HAS_NUMBA

NUMBA_OPTS = {"cache": True, "nogil": True}


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return it untouched."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(**NUMBA_OPTS)(fn)
