"""Selection of the kernel implementation.

The compiled extension is used when importable.  ``AWBEM_BACKEND=python``
forces the NumPy fallback; ``AWBEM_BACKEND=compiled`` makes a missing
extension an error.
"""

from __future__ import annotations

import os

from . import _kernels_py

_choice = os.environ.get("AWBEM_BACKEND", "auto").lower()

if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"AWBEM_BACKEND must be auto, python or compiled, got {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "compiled":
            raise

NAME = "compiled" if _compiled is not None else "python"


def get(name: str | None = None):
    """Kernel module by name; ``None`` gives the default selection."""
    if name is None:
        return _compiled if _compiled is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available() -> list:
    return ["python"] + (["compiled"] if _compiled is not None else [])
