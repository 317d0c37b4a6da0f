"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the pure-Python
module is used. Set ``SUTUREGRASP_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _purepy

if os.environ.get("SUTUREGRASP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _purepy
else:
    try:
        from . import _speedups as _impl
    except ImportError:  # extension not built
        _impl = _purepy

BACKEND = _impl.BACKEND
zhang_suen = _impl.zhang_suen
out_of_zone = _impl.out_of_zone
trace = _impl.trace
trace_rim = _impl.trace_rim
dijkstra = _impl.dijkstra


def available_backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _purepy}
    try:
        from . import _speedups
    except ImportError:
        pass
    else:
        found["cython"] = _speedups
    return found
