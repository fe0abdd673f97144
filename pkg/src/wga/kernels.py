"""Kernel selection: the compiled extension when available, numpy otherwise.

Set ``WGA_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import importlib
import os

from . import _kernels_py

DIALOG, REF, RECAP, GEN = _kernels_py.DIALOG, _kernels_py.REF, _kernels_py.RECAP, _kernels_py.GEN
V_DIAGONAL = _kernels_py.V_DIAGONAL
V_CROSS_SAMPLE = _kernels_py.V_CROSS_SAMPLE
V_FUTURE = _kernels_py.V_FUTURE
V_GEN_RESTRICTED = _kernels_py.V_GEN_RESTRICTED
V_MISSING = _kernels_py.V_MISSING


def get_impl(name: str):
    """Return a kernel module by name: ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("wga._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("WGA_PURE_PYTHON") == "1":
        return _kernels_py, "python"
    try:
        return get_impl("cython"), "cython"
    except ImportError:
        return _kernels_py, "python"


_impl, BACKEND = _select()

ffd_assign = _impl.ffd_assign
fill_hybrid_mask = _impl.fill_hybrid_mask
find_violations = _impl.find_violations
