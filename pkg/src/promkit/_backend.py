"""Kernel backend selection.

The hot Monte Carlo and grid-search loops have two implementations: numba
@njit kernels and a vectorized pure-numpy fallback.  The env var
PROMKIT_BACKEND forces one ("numba" or "numpy"); unset, numba is used when
importable.
"""

from __future__ import annotations

import os

from .errors import ConfigValidationError

_ENV_VAR = "PROMKIT_BACKEND"


def _detect() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested not in ("", "numba", "numpy"):
        raise ConfigValidationError(
            f"{_ENV_VAR} must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if requested == "numba":
            raise ConfigValidationError(
                f"{_ENV_VAR}=numba requested but numba is not importable")
        return "numpy"
    return "numba"


ACTIVE_BACKEND = _detect()


def set_num_threads(n: int) -> None:
    """Cap numba's thread pool; harmless no-op on the numpy backend."""
    if n < 1:
        raise ConfigValidationError("thread count must be >= 1")
    if ACTIVE_BACKEND == "numba":
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
