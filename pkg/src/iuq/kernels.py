"""Numeric hot loops, compiled when available.

The Cython core is used when it was built at install time; otherwise the
pure-Python twin is selected. Set ``IUQ_PURE_PYTHON=1`` to force the
fallback.
"""
from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("IUQ_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND: str = _impl.NAME

exp_weights = _impl.exp_weights
cumulative_weights = _impl.cumulative_weights
linear_weights = _impl.linear_weights
mann_whitney_auc = _impl.mann_whitney_auc
average_precision = _impl.average_precision
closeness = _impl.closeness
