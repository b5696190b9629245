"""Optional numba acceleration for the hot numeric kernels.

The sparse Cholesky and triangular-solve kernels are written as plain
loops over numpy arrays so that the same source runs either JIT-compiled
(default) or as ordinary Python.  Set the environment variable
``CONDEXTREMES_NUMBA=0`` before import to force the pure-numpy fallback;
the flag is also flipped automatically if numba is not importable.

``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

_flag = os.environ.get("CONDEXTREMES_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _flag not in ("0", "false", "no", "off")

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - depends on environment
        NUMBA_ENABLED = False

if not NUMBA_ENABLED:

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit (pure-Python fallback path)."""
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap
