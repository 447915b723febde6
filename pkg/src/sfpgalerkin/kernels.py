"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Setting ``SFPG_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

if os.environ.get("SFPG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _fallback

BACKEND: str = _impl.BACKEND
advance = _impl.advance
langevin = _impl.langevin


def available_backends() -> dict:
    """Map backend name to module for every importable implementation."""
    out = {"python": _fallback}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
