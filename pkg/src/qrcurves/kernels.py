"""Backend selection for the batched kernels.

The compiled extension is used when importable; set ``QRCURVES_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("QRCURVES_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.NAME
dets = _impl.dets
sym_eigvals = _impl.sym_eigvals
block_stats = _impl.block_stats


def available_backends() -> dict:
    """Map backend name -> module for every importable implementation."""
    out = {"numpy": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
