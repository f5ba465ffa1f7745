"""Kernel backend selection.

Set ``IFRNOW_BACKEND=numpy`` to run the pure-numpy kernels; the default is
numba when it imports, numpy otherwise.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
REQUESTED = os.environ.get("IFRNOW_BACKEND", "numba").strip().lower()
if REQUESTED not in ("numba", "numpy"):
    raise ImportError(f"IFRNOW_BACKEND must be 'numba' or 'numpy', got {REQUESTED!r}")
BACKEND = "numba" if REQUESTED == "numba" and HAVE_NUMBA else "numpy"

