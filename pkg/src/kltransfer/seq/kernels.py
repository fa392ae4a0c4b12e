"""Backend selection for the recurrence kernels.

The compiled extension is preferred when importable; set
``KLTRANSFER_BACKEND=numpy`` (or ``cython``) to force a choice.  Both
backends compute the same math in the same association order up to BLAS
rounding, so results agree to ~1e-12 but are not guaranteed bit-identical
across backends.  Within one backend everything is deterministic.
"""

import os

_requested = os.environ.get("KLTRANSFER_BACKEND", "").strip().lower()

if _requested == "numpy":
    from . import _kernels_np as _impl

    BACKEND = "numpy"
elif _requested == "cython":
    from . import _speedups as _impl  # raises if the extension was not built

    BACKEND = "cython"
elif _requested:
    raise ValueError(f"KLTRANSFER_BACKEND must be 'numpy' or 'cython', not {_requested!r}")
else:
    try:
        from . import _speedups as _impl

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_np as _impl

        BACKEND = "numpy"

recurrent_forward = _impl.recurrent_forward
recurrent_backward = _impl.recurrent_backward
