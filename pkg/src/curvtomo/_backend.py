"""Kernel backend selection and thread control.

``CURVTOMO_NUMBA=0`` forces the pure-numpy kernels; otherwise numba is used
when importable. ``CURVTOMO_THREADS`` sets the numba thread count.
"""

import logging
import os

log = logging.getLogger(__name__)

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_forced = None


def numba_enabled():
    if _forced is not None:
        return _forced == "numba"
    flag = os.environ.get("CURVTOMO_NUMBA", "1").strip().lower()
    return HAVE_NUMBA and flag not in ("0", "false", "no", "off")


def set_backend(name):
    """Force ``"numba"`` or ``"numpy"``; ``None`` restores the env default."""
    global _forced
    if name not in (None, "numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _forced = name


def resolve(backend=None):
    if backend is None:
        return "numba" if numba_enabled() else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    return backend


def set_threads(n=None):
    """Set the kernel thread count from ``n`` or ``CURVTOMO_THREADS``.

    Kernels parallelize over independent rays only, so results do not depend
    on the thread count.
    """
    if n is None:
        env = os.environ.get("CURVTOMO_THREADS")
        if not env:
            return None
        n = int(env)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if HAVE_NUMBA:
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    return n
