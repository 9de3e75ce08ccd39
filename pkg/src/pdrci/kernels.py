"""Hot-loop dispatch: the compiled extension when built, numpy otherwise.

Set ``PDRCI_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("PDRCI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

max_violation = _impl.max_violation
count_inside = _impl.count_inside
rollout_lpv = _impl.rollout_lpv


def implementations():
    """All available backends by name (for tests and benchmarks)."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        return out
    out["cython"] = compiled
    return out
