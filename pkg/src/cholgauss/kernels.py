"""Backend selection for the evaluation kernels.

The compiled Cython module is preferred; the NumPy implementation is the
fallback.  Set ``CHOLGAUSS_PURE_PYTHON=1`` to force the fallback (useful
for benchmarking and debugging).
"""

import os

from . import _kernels_np

if os.environ.get("CHOLGAUSS_PURE_PYTHON"):
    _impl = _kernels_np
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_np

BACKEND = _impl.BACKEND
LOG_2PI = _kernels_np.LOG_2PI

basic_loglik = _impl.basic_loglik
basic_derivs = _impl.basic_derivs
modified_loglik = _impl.modified_loglik
modified_derivs = _impl.modified_derivs
