"""Kernel selection: the compiled extension when it is importable, the NumPy
fallback otherwise. Set ``LMIDRIFT_PURE_PYTHON=1`` to force the fallback."""

import os

from . import _fallback

BACKEND = "python"
if os.environ.get("LMIDRIFT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

shapley_walk_linear = _impl.shapley_walk_linear
coalition_values_linear = _impl.coalition_values_linear
shapley_from_values = _impl.shapley_from_values

__all__ = ["BACKEND", "shapley_walk_linear", "coalition_values_linear", "shapley_from_values"]
