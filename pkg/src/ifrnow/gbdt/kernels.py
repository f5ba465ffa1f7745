"""Resolve the active kernel module (see ``ifrnow._backend``)."""
from __future__ import annotations

from types import ModuleType

from .._backend import BACKEND, HAVE_NUMBA


def get(name: str | None = None) -> ModuleType:
    name = name or BACKEND
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        from . import _kernels_numba as mod
    elif name == "numpy":
        from . import _kernels_numpy as mod
    else:
        raise ValueError(f"unknown backend {name!r}")
    return mod


active = get()
