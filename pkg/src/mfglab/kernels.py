"""Backend selection for the particle kernels.

The compiled extension is used when importable; ``MFGLAB_PURE=1`` forces the
NumPy fallback.  ``BACKEND`` names the active one.
"""
from __future__ import annotations

import os

from . import _fallback

_ext = None
if not os.environ.get("MFGLAB_PURE"):
    try:
        from . import _kernels as _ext  # type: ignore[no-redef]
    except ImportError:  # pragma: no cover - depends on the build
        _ext = None

BACKEND = "cython" if _ext is not None else "numpy"
_impl = _ext if _ext is not None else _fallback

profile_sums_direct = _impl.profile_sums_direct
profile_sums_cells = _impl.profile_sums_cells
deposit = _impl.deposit


def backends() -> dict:
    """All importable implementations, keyed by name."""
    out = {"numpy": _fallback}
    if _ext is not None:
        out["cython"] = _ext
    return out
