"""Optional numba acceleration.

Set ``HCRISK_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("HCRISK_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by HCRISK_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag in a subprocess
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
