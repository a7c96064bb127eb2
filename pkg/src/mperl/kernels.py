"""Backend selection for the relational edge kernels.

The compiled extension is used when importable; setting the environment
variable ``MPERL_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("MPERL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

contract = _impl.contract
expand = _impl.expand
coef_grad = _impl.coef_grad

__all__ = ["BACKEND", "contract", "expand", "coef_grad"]
