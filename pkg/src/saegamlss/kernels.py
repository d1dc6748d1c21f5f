"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``SAEGAMLSS_PURE=1`` to force the numpy fallback.
"""
import os

import numpy as np

if os.environ.get("SAEGAMLSS_PURE", "") not in ("", "0"):
    from . import _core_py as _impl
    COMPILED = False
else:
    try:
        from . import _core as _impl
        COMPILED = True
    except ImportError:  # extension not built
        from . import _core_py as _impl
        COMPILED = False

BACKEND = "cython" if COMPILED else "numpy"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def wls(X, z, w):
    return _impl.wls(_c(X), _c(z), _c(w))


def pwls_re(X, z, w, area, J, lam):
    return _impl.pwls_re(_c(X), _c(z), _c(w), np.ascontiguousarray(area, dtype=np.intp), int(J), float(lam))


def group_sum(values, area, J):
    return _impl.group_sum(_c(values), np.ascontiguousarray(area, dtype=np.intp), int(J))
