"""Kernel backend selection.

The compiled extension (`_ckern`, Cython) is preferred; the numpy
fallback (`_pykern`) is used when the extension is unavailable or when
the environment variable PHOTONSERVER_PURE is set to a non-empty value
other than "0".  `BACKEND` names the active implementation.
"""

import os

from . import _pykern

if os.environ.get("PHOTONSERVER_PURE", "0") not in ("", "0"):
    _impl = _pykern
    BACKEND = "python"
else:
    try:
        from . import _ckern as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykern
        BACKEND = "python"

rk4_propagate = _impl.rk4_propagate
corr_binned = _impl.corr_binned
corr_fine = _impl.corr_fine

__all__ = ["BACKEND", "rk4_propagate", "corr_binned", "corr_fine"]
