"""Backend selection for the hot kernels.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy/pure-Python twin in ``_pykernels`` takes over. Set
``SIGMASTAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

COLUMNS = _pykernels.COLUMNS

if os.environ.get("SIGMASTAB_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

qp_eval = _impl.qp_eval
sim_run = _impl.sim_run


def backends():
    """Mapping of available backend name to kernel module."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
