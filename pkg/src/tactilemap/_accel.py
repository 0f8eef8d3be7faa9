"""Backend switch for the compiled kernels.

Numba is used when importable unless ``TACTILEMAP_DISABLE_NUMBA`` is set to a
truthy value, in which case every kernel falls back to its pure-numpy twin.
The flag is read once at import time.
"""

import os
import warnings

_FLAG = os.environ.get("TACTILEMAP_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba ships with the env
    numba = None

USE_NUMBA = numba is not None and not DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise.

    Kernels decorated here are always compiled when numba exists (so the
    benchmark can compare both paths); the env flag only controls which
    implementation the public dispatchers pick.
    """
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend():
    return "numba" if USE_NUMBA else "numpy"


def thread_cap():
    """Worker cap from ``TACTILEMAP_THREADS`` (None when unset)."""
    val = os.environ.get("TACTILEMAP_THREADS")
    if not val:
        return None
    n = int(val)
    if n < 1:
        raise ValueError("TACTILEMAP_THREADS must be >= 1")
    return n


def apply_thread_cap():
    """Apply ``TACTILEMAP_THREADS`` to numba's thread pool; returns the cap."""
    n = thread_cap()
    if n is not None and numba is not None:
        with warnings.catch_warnings():
            # threading-layer probing may warn about an old TBB; harmless here
            warnings.simplefilter("ignore")
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n
