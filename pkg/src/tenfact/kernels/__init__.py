"""Kernel backend selection.

The compiled Cython backend is used when available; set TENFACT_PURE_PYTHON=1
to force the numpy fallback (used by tests and the benchmark).
"""

import os

if os.environ.get("TENFACT_PURE_PYTHON"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _pykernels as _impl  # type: ignore[no-redef]

BACKEND = _impl.BACKEND
outer3_i64 = _impl.outer3_i64
sub_outer3 = _impl.sub_outer3
add_outer3_inplace = _impl.add_outer3_inplace
max_abs = _impl.max_abs
all_zero = _impl.all_zero
