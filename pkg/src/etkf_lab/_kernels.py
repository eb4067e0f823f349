"""Select the RK4 backend at import time.

The compiled core is used when it was built; set ``ETKF_LAB_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _rk4_py

if os.environ.get("ETKF_LAB_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _rk4_py
else:
    try:
        from . import _rk4_ext as _impl
    except ImportError:
        _impl = _rk4_py

BACKEND = "cython" if _impl is not _rk4_py else "python"

rk4_lorenz63 = _impl.rk4_lorenz63
rk4_lorenz96 = _impl.rk4_lorenz96
rk4_linear = _impl.rk4_linear
