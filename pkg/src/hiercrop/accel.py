"""Backend selection for the signal hot loops.

The compiled ``_ext`` module is used when it imports; otherwise the numpy/scipy
fallback in ``_pyext``. Set ``HIERCROP_PURE=1`` to force the fallback.
"""
import os

from . import _pyext

BACKEND = "python"
if os.environ.get("HIERCROP_PURE") != "1":
    try:
        from . import _ext as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pyext
else:
    _impl = _pyext

whittaker_solve = _impl.whittaker_solve
asym_whittaker = _impl.asym_whittaker
hampel_flags = _impl.hampel_flags

__all__ = ["BACKEND", "whittaker_solve", "asym_whittaker", "hampel_flags"]
