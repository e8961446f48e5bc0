"""Kernel backend selection.

Hot loops come in two flavours: numba ``@njit`` kernels and vectorised numpy
fallbacks.  ``MSVOL_BACKEND=numpy`` forces the fallback; the default is numba
whenever it imports.
"""
import os

# skip the TBB probe, which warns on older system TBB builds
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    numba = None
    HAS_NUMBA = False

BACKENDS = ("numba", "numpy")


def get_backend(name=None):
    """Resolve ``name`` (or ``$MSVOL_BACKEND``) to an available backend."""
    name = name or os.environ.get("MSVOL_BACKEND", "numba")
    name = name.lower()
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}, expected one of {BACKENDS}")
    if name == "numba" and not HAS_NUMBA:
        return "numpy"
    return name


def set_threads(n=None):
    """Set the numba worker count from ``n`` or ``$MSVOL_THREADS``."""
    if n is None:
        env = os.environ.get("MSVOL_THREADS")
        n = int(env) if env else None
    if n is None or not HAS_NUMBA:
        return
    if n < 1:
        raise ValueError("thread count must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
